//! Packaged benchmark configurations.

use crate::{Failure, Prepared, RunConfig};

#[derive(Debug, Clone, Copy)]
pub struct Benchmark {
    pub name: &'static str,
    pub toml: &'static str,
    /// Whether the direct simulation can resolve the scales on the
    /// configured ε ladder.
    pub dns: bool,
}

macro_rules! bench {
    ($name:literal, $dns:expr) => {
        Benchmark {
            name: $name,
            toml: include_str!(concat!("../benchmarks/", $name, ".toml")),
            dns: $dns,
        }
    };
}

pub const ALL: &[Benchmark] = &[
    bench!("harmonic", true),
    bench!("two_scale", false),
    bench!("resonance", true),
    bench!("quasilinear", true),
    bench!("laminate2d", false),
    bench!("constant", true),
    bench!("mixed_scales", false),
];

pub fn get(name: &str) -> Option<&'static Benchmark> {
    ALL.iter().find(|b| b.name == name)
}

pub fn names() -> Vec<&'static str> {
    ALL.iter().map(|b| b.name).collect()
}

impl Benchmark {
    pub fn config(&self, overrides: &[String]) -> Result<RunConfig, Failure> {
        RunConfig::from_toml(self.toml, overrides)
    }

    pub fn prepared(&self, overrides: &[String]) -> Result<Prepared, Failure> {
        Prepared::new(self.config(overrides)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_benchmark_parses() {
        for b in ALL {
            let p = b.prepared(&[]).unwrap_or_else(|e| panic!("{}: {e}", b.name));
            assert_eq!(p.spatial.len(), multihom_core::flux::Flux::spatial_scales(&p.flux), "{}", b.name);
        }
        assert!(get("harmonic").is_some() && get("nope").is_none());
    }
}
