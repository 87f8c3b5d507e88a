// One-off helper: writes the canned evaluation scenario configs as JSON.
use dogm_core::scenarios;

fn main() {
    let out = std::path::Path::new("configs");
    for cfg in scenarios::evaluation_scenarios(1000) {
        let path = out.join(format!("{}.json", cfg.name));
        std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
        println!("wrote {}", path.display());
    }
}
