// Map raw generations back to intents: exact, token-mapped and gestalt
// fuzzy matches.

use std::collections::BTreeMap;
use std::error::Error;

use clara::pipeline::{gestalt_similarity, resolve_label};
use clara::taxonomy::Intent;
use clara::Taxonomy;

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let mk = |id: &str, leaf: &str, label: &str| Intent {
        id: id.into(),
        title: label.into(),
        category_path: vec!["Order".into(), "Manage".into(), leaf.into()],
        rep_query: format!("Request to {label}"),
        compressed_label: Some(label.into()),
        language: "en".into(),
    };
    let kb = Taxonomy::from_intents(vec![
        mk("I1", "Cancel", "Cancel Order"),
        mk("I2", "Track", "Track Package"),
    ])?;

    for (a, b) in [("Cancel Order", "Order Cancel"), ("Cancl Order", "Cancel Order"), ("Cancl Order", "Track Package")] {
        println!("gestalt({a:?}, {b:?}) = {:.4}", gestalt_similarity(a, b));
    }
    let map = BTreeMap::from([("L2".to_string(), "I2".to_string())]);
    for raw in ["Cancel Order.", "cancel order", "L2", "Cancl Order", "The intent title is Trak Package"] {
        let r = resolve_label(raw, &kb, Some(&map))?;
        println!("{raw:<36} -> {} ({:?})", r.intent_id, r.kind);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
