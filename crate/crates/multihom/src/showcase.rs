//! The embedded two-spatial, three-temporal scale example and its checks.

use std::io::Write;

use multihom_core::scale::{classify, ClassifyOpts, JointClassification, Role, ScaleError, ScaleExponents, ScaleList};

use crate::Failure;

pub const SPATIAL: [&str; 2] = ["2*sqrt(eps)", "eps^2"];
pub const TEMPORAL: [&str; 3] = ["exp(eps)-1", "ln(1+eps^2)", "eps^3*ln(1+1/eps)"];

/// Loosens or tightens the slope tolerance of the limit engine.
pub const P_TOL_ENV: &str = "MULTIHOM_P_TOL";
/// Overrides the number of ε samples K.
pub const SAMPLES_ENV: &str = "MULTIHOM_SAMPLES";

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

/// Default classification options with the environment overrides applied.
pub fn opts_from_env() -> Result<ClassifyOpts, Failure> {
    let mut opts = ClassifyOpts::default();
    if let Ok(v) = std::env::var(P_TOL_ENV) {
        opts.limits.p_tol = v
            .trim()
            .parse()
            .ok()
            .filter(|p: &f64| *p > 0.0)
            .ok_or_else(|| Failure::Config(format!("{P_TOL_ENV}='{v}' is not a positive number")))?;
    }
    if let Ok(v) = std::env::var(SAMPLES_ENV) {
        opts.limits.samples = v
            .trim()
            .parse()
            .ok()
            .filter(|k: &usize| *k >= 1)
            .ok_or_else(|| Failure::Config(format!("{SAMPLES_ENV}='{v}' is not a positive integer")))?;
    }
    Ok(opts)
}

fn joint_checks(joint: &JointClassification) -> Vec<Check> {
    let dup = joint.duplicate_pairs.iter().map(|(i, j, _)| (*i, *j)).collect::<Vec<_>>();
    let merged: Vec<(Role, usize)> = joint.merged.iter().map(|m| (m.role, m.index)).collect();
    let expected = [(Role::Spatial, 0), (Role::Temporal, 0), (Role::Spatial, 1), (Role::Temporal, 2)];
    let names: Vec<String> = joint.merged.iter().map(|m| m.expr.to_string()).collect();
    vec![
        Check {
            name: "duplicate pair (eps^2, ln(1+eps^2))",
            pass: dup == [(1, 1)],
            detail: format!("pairs {:?}", joint.duplicate_pairs),
        },
        Check {
            name: "merged list {2 sqrt(eps), exp(eps)-1, eps^2, eps^3 ln(1+1/eps)}",
            pass: merged == expected,
            detail: names.join(", "),
        },
        Check {
            name: "merged list well-separated with witness l <= 3",
            pass: joint.jointly_well_separated && joint.joint.witness.is_some_and(|l| l <= 3),
            detail: format!("witness {:?}, per pair {:?}", joint.joint.witness, joint.joint.pair_witnesses),
        },
    ]
}

fn exponent_checks(ex: Option<&ScaleExponents>) -> Vec<Check> {
    let missing = || "no exponents".to_string();
    vec![
        Check {
            name: "d = (2, 0)",
            pass: ex.is_some_and(|e| e.d == [2, 0]),
            detail: ex.map(|e| format!("d = {:?}", e.d)).unwrap_or_else(missing),
        },
        Check {
            name: "|rho_1 - 4| < 1e-3",
            pass: ex.is_some_and(|e| (e.rho[0] - 4.0).abs() < 1e-3 && e.partner[0] == Some(0)),
            detail: ex.map(|e| format!("rho_1 = {}", e.rho[0])).unwrap_or_else(missing),
        },
        Check {
            name: "rho_2 = 0",
            pass: ex.is_some_and(|e| e.rho[1] == 0.0 && e.partner[1].is_none()),
            detail: ex.map(|e| format!("rho_2 = {}", e.rho[1])).unwrap_or_else(missing),
        },
    ]
}

/// Classifies the embedded example and returns the six checks. Prints one
/// PASS/FAIL line per check. Indeterminate limits are an error.
pub fn reproduce(opts: &ClassifyOpts, out: &mut dyn Write) -> Result<Vec<Check>, Failure> {
    let spatial = ScaleList::parse(Role::Spatial, &SPATIAL).map_err(|e| Failure::Numeric(e.to_string()))?;
    let temporal = ScaleList::parse(Role::Temporal, &TEMPORAL).map_err(|e| Failure::Numeric(e.to_string()))?;
    let checks = match classify(&spatial, &temporal, opts) {
        Ok((joint, ex)) => {
            let mut c = exponent_checks(Some(&ex));
            c.extend(joint_checks(&joint));
            c
        }
        Err(ScaleError::NotJointlySeparated(joint)) => {
            let mut c = exponent_checks(None);
            c.extend(joint_checks(&joint));
            c
        }
        Err(e) => return Err(e.into()),
    };
    for c in &checks {
        writeln!(out, "{} {} ({})", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail)?;
    }
    Ok(checks)
}
