//! Scenarios shipped with the binary.

pub const ALL: &[(&str, &str)] = &[
    ("table3-dynamic-heading", include_str!("../scenarios/table3-dynamic-heading.toml")),
    ("table4-budget", include_str!("../scenarios/table4-budget.toml")),
    ("fig3-hyperfine-beat", include_str!("../scenarios/fig3-hyperfine-beat.toml")),
    ("fig6-calibration", include_str!("../scenarios/fig6-calibration.toml")),
    ("fig7-switch-comparison", include_str!("../scenarios/fig7-switch-comparison.toml")),
    ("fig8-eddy-time-constant", include_str!("../scenarios/fig8-eddy-time-constant.toml")),
    ("fig9-probe-heading", include_str!("../scenarios/fig9-probe-heading.toml")),
    ("bm-sweep", include_str!("../scenarios/bm-sweep.toml")),
    ("freq-sweep", include_str!("../scenarios/freq-sweep.toml")),
    ("bounds", include_str!("../scenarios/bounds.toml")),
    ("bounds-projection", include_str!("../scenarios/bounds-projection.toml")),
    ("four-shot-panorama", include_str!("../scenarios/four-shot-panorama.toml")),
];

pub fn get(name: &str) -> Option<&'static str> {
    ALL.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}
