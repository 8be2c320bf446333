//! Built-in scenarios. The TOML sources live in `presets/` and are compiled
//! into the binary.

use crate::error::{Error, Result};

use super::config::RunConfig;

const PRESETS: [(&str, &str); 8] = [
    ("fig-scalar1", include_str!("../../presets/fig-scalar1.toml")),
    ("fig-scalar2", include_str!("../../presets/fig-scalar2.toml")),
    ("fig-scalar3", include_str!("../../presets/fig-scalar3.toml")),
    ("fig-scalar4", include_str!("../../presets/fig-scalar4.toml")),
    ("fig-system1", include_str!("../../presets/fig-system1.toml")),
    ("fig-system2", include_str!("../../presets/fig-system2.toml")),
    ("small-mass", include_str!("../../presets/small-mass.toml")),
    ("heat-smooth", include_str!("../../presets/heat-smooth.toml")),
];

pub fn preset_names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(n, _)| *n)
}

pub fn preset_source(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

pub fn preset(name: &str) -> Result<RunConfig> {
    let text = preset_source(name).ok_or_else(|| {
        Error::config(
            "preset",
            format!(
                "unknown preset `{name}`; available: {}",
                preset_names().collect::<Vec<_>>().join(", ")
            ),
        )
    })?;
    RunConfig::from_toml_str(text, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runner::config::{InitialCondition, KernelSpec, KernelsConfig};

    fn alpha_and_l(name: &str) -> (Vec<Vec<f64>>, f64) {
        let c = preset(name).unwrap();
        let KernelsConfig::Scaled { base, alpha } = &c.kernels else {
            panic!("{name}: expected scaled kernels")
        };
        let KernelSpec::Tophat { alpha: a0, radius } = base else {
            panic!("{name}: expected a top-hat base")
        };
        assert_eq!(*radius, 1.0);
        let scaled = alpha.iter().map(|r| r.iter().map(|a| a * a0).collect()).collect();
        (scaled, c.domain.half_length)
    }

    #[test]
    fn every_preset_parses_and_builds_its_kernels() {
        for name in preset_names() {
            let c = preset(name).unwrap();
            assert_eq!(c.name.as_deref(), Some(name));
            c.kernel_matrix().unwrap();
        }
        assert!(preset("fig-scalar9").is_err());
    }

    #[test]
    fn figure_parameters() {
        assert_eq!(alpha_and_l("fig-scalar1"), (vec![vec![2.0]], 12.0));
        assert_eq!(alpha_and_l("fig-scalar2"), (vec![vec![30.0]], 6.0));
        assert_eq!(alpha_and_l("fig-scalar3"), (vec![vec![20.0]], 12.0));
        assert_eq!(alpha_and_l("fig-scalar4"), (vec![vec![-20.0]], 16.0));
        assert_eq!(
            alpha_and_l("fig-system1"),
            (vec![vec![20.0, -10.0], vec![-10.0, 2.0]], 10.0)
        );
        assert_eq!(
            alpha_and_l("fig-system2"),
            (vec![vec![20.0, -10.0], vec![5.0, 20.0]], 10.0)
        );
        for name in preset_names().filter(|n| n.starts_with("fig-")) {
            let c = preset(name).unwrap();
            assert_eq!(c.domain.cells_per_unit, 100.0);
            for s in &c.species {
                assert_eq!(s.diffusion, 0.25);
                assert_eq!(s.initial, InitialCondition::Indicator { ell: 4.0, mass: 1.0 });
            }
        }
    }
}
