//! Reference error tables for the manufactured problem with degrees
//! `(1,1,1,0,0)`, `ν = 1`, `K = I`, `μ = 1`, used by `--check`.

use wgds::mms::ConvergenceTable;
use wgds::wgspace::{Permeability, WgParams};

/// Relative tolerance on each tabulated error.
pub const TABLE_REL_TOL: f64 = 0.02;
/// Largest allowed ratio between consecutive inf-sup constants.
pub const INF_SUP_MAX_DROP: f64 = 2.0;

type Row = (usize, [f64; 5]);

const RHO_0_01: [Row; 5] = [
    (8, [0.76224, 2.26639, 0.84301, 2.54274, 0.91539]),
    (16, [0.30306, 0.26226, 0.25407, 1.56049, 0.56486]),
    (32, [0.14960, 0.03332, 0.08316, 0.65226, 0.24125]),
    (64, [0.07461, 0.00486, 0.02365, 0.20346, 0.07536]),
    (128, [0.03719, 0.00089, 0.00615, 0.05691, 0.02016]),
];

const RHO_1: [Row; 5] = [
    (8, [0.56159, 0.03842, 0.07539, 0.18953, 0.07511]),
    (16, [0.28729, 0.00850, 0.02055, 0.06858, 0.01953]),
    (32, [0.14443, 0.00204, 0.00538, 0.02925, 0.00492]),
    (64, [0.07231, 0.00050, 0.00137, 0.01381, 0.00123]),
    (128, [0.03616, 0.00012, 0.00035, 0.00678, 0.00031]),
];

const RHO_100: [Row; 5] = [
    (8, [0.47789, 0.03379, 0.31537, 0.06226, 0.16416]),
    (16, [0.24268, 0.01117, 0.09409, 0.02190, 0.04211]),
    (32, [0.12079, 0.00325, 0.02371, 0.00950, 0.01061]),
    (64, [0.06017, 0.00086, 0.00583, 0.00457, 0.00264]),
    (128, [0.03004, 0.00022, 0.00144, 0.00227, 0.00066]),
];

/// Reference rows for a parameter set, if tabulated.
pub fn table_for(p: &WgParams) -> Option<&'static [Row]> {
    let base = WgParams::default();
    let same_problem = (p.alpha_s, p.alpha_d, p.beta, p.gamma_s, p.gamma_d) == (1, 1, 1, 0, 0)
        && p.nu == base.nu
        && p.mu == base.mu
        && p.permeability == Permeability::isotropic(1.0)
        && p.rho_s == p.rho_d;
    if !same_problem {
        return None;
    }
    match p.rho_s {
        r if r == 0.01 => Some(&RHO_0_01),
        r if r == 1.0 => Some(&RHO_1),
        r if r == 100.0 => Some(&RHO_100),
        _ => None,
    }
}

/// Mismatches between computed rows and the reference table.
pub fn compare(p: &WgParams, table: &ConvergenceTable) -> Vec<String> {
    let Some(reference) = table_for(p) else {
        return vec![format!("no reference values for rho={} with these parameters", p.rho_s)];
    };
    let mut bad = Vec::new();
    for row in &table.rows {
        let Some((_, want)) = reference.iter().find(|(n, _)| *n == row.n) else {
            continue;
        };
        for (k, (got, want)) in row.errors.as_array().iter().zip(want).enumerate() {
            let dev = (got - want).abs() / want;
            if dev > TABLE_REL_TOL {
                bad.push(format!(
                    "rho={} n={} column {}: {got:.5e} vs {want:.5e} ({:.1}%)",
                    p.rho_s,
                    row.n,
                    wgds::mms::ErrorReport::COLUMNS[k],
                    100.0 * dev
                ));
            }
        }
    }
    bad
}
