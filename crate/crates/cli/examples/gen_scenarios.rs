//! Writes the built-in scenarios as TOML files into ./scenarios/.
fn main() {
    std::fs::create_dir_all("scenarios").unwrap();
    std::fs::write(
        "scenarios/desk.toml",
        pmbm_core::sim::ScenarioConfig::desk().to_toml(),
    )
    .unwrap();
    std::fs::write(
        "scenarios/paper.toml",
        pmbm_core::sim::ScenarioConfig::paper().to_toml(),
    )
    .unwrap();
    eprintln!("wrote scenarios/desk.toml and scenarios/paper.toml");
}
