//! Quantities of the two-state tightness example, computed numerically and
//! from their closed forms.

use std::fmt;

use nalgebra::DVector;
use serde::Serialize;

use super::fixtures::fixture_two_state;
use super::spec::SpecError;
use crate::emphasis::{emphasis_bundle, InterestVector};
use crate::error::EtdError;
use crate::mdp::induced_chain;
use crate::numfmt::format_f64;
use crate::operators::weighted_norm;

/// Allowed gap between the squared-modulus ratio at `v = (0, 1)` and `γ`.
pub const TIGHTNESS_TOL: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExampleRow {
    pub quantity: &'static str,
    pub computed: f64,
    pub closed_form: f64,
    pub abs_diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExampleTable {
    pub epsilon: f64,
    pub gamma: f64,
    pub rows: Vec<ExampleRow>,
}

impl ExampleTable {
    pub fn row(&self, quantity: &str) -> Option<&ExampleRow> {
        self.rows.iter().find(|r| r.quantity == quantity)
    }

    pub fn max_abs_diff(&self) -> f64 {
        self.rows.iter().map(|r| r.abs_diff).fold(0.0, f64::max)
    }
}

impl fmt::Display for ExampleTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "two-state example: epsilon = {}, gamma = {}", self.epsilon, self.gamma)?;
        writeln!(f, "{:<26} {:>24} {:>24} {:>24}", "quantity", "computed", "closed_form", "abs_diff")?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<26} {:>24} {:>24} {:>24}",
                r.quantity,
                format_f64(r.computed),
                format_f64(r.closed_form),
                format_f64(r.abs_diff)
            )?;
        }
        Ok(())
    }
}

/// Ratio `‖γP_π v‖²_f / ‖v‖²_f` at `v = (0, 1)` and its distance to `γ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tightness {
    pub epsilon: f64,
    pub gamma: f64,
    pub ratio: f64,
    pub deviation: f64,
    pub within_tolerance: bool,
}

fn numeric(err: EtdError) -> SpecError {
    SpecError::Invalid { field: "example".into(), message: err.to_string() }
}

pub fn example_table(epsilon: f64, gamma: f64) -> Result<ExampleTable, SpecError> {
    let inst = fixture_two_state(epsilon, gamma)?;
    let bundle =
        emphasis_bundle(&inst.mdp, &inst.target, &inst.behavior, 0.0, &InterestVector::ones(2)).map_err(numeric)?;
    let chain = induced_chain(&inst.mdp, &inst.target).map_err(numeric)?;
    let v = DVector::from_vec(vec![0.0, 1.0]);
    let pv = &chain.transition_matrix * &v;
    let v_sq = weighted_norm(&v, &bundle.f).map_err(numeric)?.powi(2);
    let pv_sq = weighted_norm(&pv, &bundle.f).map_err(numeric)?.powi(2);
    let gpv_sq = weighted_norm(&(&pv * gamma), &bundle.f).map_err(numeric)?.powi(2);

    let (e, g) = (epsilon, gamma);
    let scale = 1.0 / (1.0 - g);
    let d_mu = bundle.d_mu.as_vector();
    let row = |quantity, computed: f64, closed_form: f64| ExampleRow {
        quantity,
        computed,
        closed_form,
        abs_diff: (computed - closed_form).abs(),
    };
    let rows = vec![
        row("d_mu(Left)", d_mu[0], 1.0 - e),
        row("d_mu(Right)", d_mu[1], e),
        row("f(Left)", bundle.f[0], scale * (1.0 + 2.0 * e * g - e - g)),
        row("f(Right)", bundle.f[1], scale * (-2.0 * e * g + e + g)),
        row("|v|^2_f", v_sq, (e + g - 2.0 * e * g) / (1.0 - g)),
        row("|P_pi v|^2_f", pv_sq, (1.0 - e).powi(2) / (1.0 - g)),
        row("|gamma P_pi v|^2_f/|v|^2_f", gpv_sq / v_sq, g * g * (1.0 - e).powi(2) / (e + g - 2.0 * e * g)),
    ];
    Ok(ExampleTable { epsilon, gamma, rows })
}

pub fn tightness(epsilon: f64, gamma: f64) -> Result<Tightness, SpecError> {
    let table = example_table(epsilon, gamma)?;
    let ratio = table.row("|gamma P_pi v|^2_f/|v|^2_f").expect("row present").computed;
    let deviation = (ratio - gamma).abs();
    Ok(Tightness { epsilon, gamma, ratio, deviation, within_tolerance: deviation <= TIGHTNESS_TOL })
}
