use std::fs;
use std::path::Path;

use liquidation_core::config::Recipe;

#[test]
fn bundled_recipes_parse_and_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("recipes");
    let mut seen = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().and_then(|e| e.to_str()) != Some("cfg") {
            continue;
        }
        let text = fs::read_to_string(&path).unwrap();
        let recipe = Recipe::from_toml_str(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        let spec = recipe.model().unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        spec.validate().unwrap();
        // a recipe survives a round trip through its own serialization
        let back = Recipe::from_toml_str(&recipe.to_toml_string()).unwrap();
        assert_eq!(back, recipe, "{}", path.display());
        seen += 1;
    }
    assert_eq!(seen, 7);
}

#[test]
fn unknown_keys_are_rejected() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("recipes");
    let text = fs::read_to_string(dir.join("table2.cfg")).unwrap().replace("[chain]", "[chain]\nbogus = 1");
    assert!(Recipe::from_toml_str(&text).is_err());
}
