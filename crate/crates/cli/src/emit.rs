//! CSV, JSON and plain-text rendering of run artifacts.

use std::fmt::Write;

use wgds::mms::ErrorReport;
use wgds::wgspace::WgParams;

use crate::config::Format;
use crate::{Artifact, Results, StudyResult};

pub fn render(a: &Artifact, format: Format) -> String {
    match format {
        Format::Json => json(a),
        Format::Csv => csv(a),
        Format::Pretty => pretty(a),
    }
}

pub fn json(a: &Artifact) -> String {
    let mut s = serde_json::to_string_pretty(a).expect("artifact serializes");
    s.push('\n');
    s
}

fn params_json(p: &WgParams) -> String {
    serde_json::to_string(p).expect("params serialize")
}

fn opt(n: Option<usize>) -> String {
    n.map(|n| n.to_string()).unwrap_or_else(|| "mesh".into())
}

/// A `#` preamble line with the parameters, a header, data rows and, for
/// studies, rate rows whose `n` field names the fit.
pub fn csv(a: &Artifact) -> String {
    let mut s = String::new();
    match &a.results {
        Results::Studies(studies) => {
            for st in studies {
                let _ = writeln!(s, "# {} {} params={}", a.tool, a.command, params_json(&st.params));
            }
            if studies.is_empty() {
                let _ = writeln!(s, "# {} {} params={}", a.tool, a.command, params_json(&a.config.params));
            }
            let _ = writeln!(s, "rho,n,h,{}", ErrorReport::COLUMNS.join(","));
            for st in studies {
                study_csv(&mut s, st);
            }
        }
        Results::InfSup(rows) => {
            let _ = writeln!(s, "# {} {} params={}", a.tool, a.command, params_json(&a.config.params));
            let _ = writeln!(s, "n,h,inf_sup,kernel_dim,coercivity_probe");
            for r in rows {
                let _ = writeln!(s, "{},{},{},{},{}", opt(r.n), r.h, r.constant, r.kernel_dim, r.coercivity_probe);
            }
        }
        Results::Colorability(rows) => {
            let _ = writeln!(s, "# {} {} params={}", a.tool, a.command, params_json(&a.config.params));
            let _ = writeln!(s, "n,stokes_cells,colorable,sweeps,black");
            for r in rows {
                let _ = writeln!(s, "{},{},{},{},{}", opt(r.n), r.stokes_cells, r.colorable, r.sweeps, r.black);
            }
        }
    }
    s
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn study_csv(s: &mut String, st: &StudyResult) {
    let t = &st.table;
    let rho = st.params.rho_s;
    for r in &t.rows {
        let _ = writeln!(s, "{rho},{},{},{}", r.n, r.h, join(&r.errors.as_array()));
    }
    if let Some(ls) = t.least_squares {
        let _ = writeln!(s, "{rho},rate-lsq-from-{},,{}", t.fit_from, join(&ls));
    }
    for (w, r) in t.rows.windows(2).zip(&t.pairwise) {
        let _ = writeln!(s, "{rho},rate-{}-{},,{}", w[0].n, w[1].n, join(r));
    }
}

/// Human-readable tables in the layout of the reference tables.
pub fn pretty(a: &Artifact) -> String {
    let mut s = String::new();
    match &a.results {
        Results::Studies(studies) => {
            if studies.is_empty() {
                let _ = writeln!(s, "(no studies)");
            }
            for st in studies {
                study_pretty(&mut s, st);
            }
        }
        Results::InfSup(rows) => {
            let _ = writeln!(s, "{}", params_line(&a.config.params));
            let _ = writeln!(s, "{:>6} {:>12} {:>12} {:>6} {:>12}", "n", "h", "inf-sup", "kernel", "a_h/|v|^2");
            for r in rows {
                let _ = writeln!(
                    s,
                    "{:>6} {:>12.5e} {:>12.5e} {:>6} {:>12.5e}",
                    opt(r.n),
                    r.h,
                    r.constant,
                    r.kernel_dim,
                    r.coercivity_probe
                );
            }
        }
        Results::Colorability(rows) => {
            for r in rows {
                let _ = writeln!(
                    s,
                    "n={}: {} ({} Stokes cells, {} sweeps, {} black)",
                    opt(r.n),
                    if r.colorable { "colorable" } else { "not colorable" },
                    r.stokes_cells,
                    r.sweeps,
                    r.black
                );
            }
        }
    }
    s
}

fn params_line(p: &WgParams) -> String {
    format!(
        "degrees (alpha_s, alpha_d, beta, gamma_s, gamma_d) = ({}, {}, {}, {}, {}), rho_s = {}, rho_d = {}, nu = {}, K = {:?}, mu = {}",
        p.alpha_s, p.alpha_d, p.beta, p.gamma_s, p.gamma_d, p.rho_s, p.rho_d, p.nu, p.permeability.0, p.mu
    )
}

fn study_pretty(s: &mut String, st: &StudyResult) {
    let t = &st.table;
    let _ = writeln!(s, "rho = {}", st.params.rho_s);
    let _ = writeln!(s, "{}", params_line(&st.params));
    let heads = ["|D_w e|_S", "|e_0|_S", "|e_p|_S", "|e_0|_D", "|e_p|_D"];
    let _ = write!(s, "{:>14}", "n");
    for h in heads {
        let _ = write!(s, " {h:>13}");
    }
    s.push('\n');
    for r in &t.rows {
        let _ = write!(s, "{:>14}", r.n);
        for e in r.errors.as_array() {
            let _ = write!(s, " {e:>13.5e}");
        }
        s.push('\n');
    }
    if let Some(ls) = t.least_squares {
        let _ = write!(s, "{:>14}", format!("r (n>={})", t.fit_from));
        for r in ls {
            let _ = write!(s, " {r:>13.4}");
        }
        s.push('\n');
    }
    for (w, r) in t.rows.windows(2).zip(&t.pairwise) {
        let _ = write!(s, "{:>14}", format!("r {}-{}", w[0].n, w[1].n));
        for x in r {
            let _ = write!(s, " {x:>13.4}");
        }
        s.push('\n');
    }
    for (n, e) in &t.failures {
        let _ = writeln!(s, "{n:>14} FAILED: {e}");
    }
    s.push('\n');
}
