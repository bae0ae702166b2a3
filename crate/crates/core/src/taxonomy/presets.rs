//! Built-in hierarchies used by tests, demos, and the CLI's `--preset` option.

/// (level 0, level 1, level 2, level 3, leaves)
const REPLICA_STYLE: &[(&str, &str, &str, &str, &[&str])] = &[
    ("Background", "Structure", "Surface", "Wall", &["Wall", "Panel"]),
    ("Background", "Structure", "Surface", "Floor", &["Floor", "Stair"]),
    ("Background", "Structure", "Surface", "Ceiling", &["Ceiling", "Beam"]),
    ("Background", "Structure", "Support", "Column", &["Pillar", "Handrail"]),
    ("Background", "Structure", "Support", "Duct", &["Pipe", "Vent"]),
    ("Background", "Opening", "Aperture", "Door", &["Door", "Window"]),
    ("Background", "Opening", "Shade", "Blind", &["Blinds", "Curtain"]),
    ("Background", "Fixture", "Lighting", "Light", &["Lamp", "Light"]),
    ("Background", "Fixture", "Utility", "Switchgear", &["Switch", "Wall-plug", "Camera"]),
    ("Background", "Fixture", "Hardware", "Tap", &["Faucet", "Sink"]),
    ("Background", "Covering", "FloorCover", "Mat", &["Rug", "Mat"]),
    ("Background", "Covering", "WallCover", "Frame", &["Picture", "Logo", "Clock"]),
    ("Object", "Furniture", "Plane", "Chair", &["Chair", "Stool", "Bench"]),
    ("Object", "Furniture", "Plane", "Table", &["Table", "Desk", "Nightstand", "Countertop"]),
    ("Object", "Furniture", "Case", "Cabinet", &["Cabinet", "Base-cabinet", "Wall-cabinet", "Wardrobe"]),
    ("Object", "Furniture", "Case", "Shelving", &["Shelf", "Tv-stand", "Rack"]),
    ("Object", "Furniture", "Soft", "Seating", &["Sofa", "Beanbag", "Cushion", "Pillow"]),
    ("Object", "Furniture", "Soft", "Sleeping", &["Bed", "Comforter", "Blanket"]),
    ("Object", "Decor", "Art", "Statue", &["Sculpture", "Vase"]),
    ("Object", "Decor", "Greenery", "Plant", &["Indoor-plant", "Plant-stand"]),
    ("Object", "Decor", "Ornament", "Trinket", &["Coaster", "Desk-organizer"]),
    (
        "Object",
        "Electronics",
        "Computing",
        "Computer",
        &["Desktop-computer", "Laptop", "Computer-keyboard", "Mouse", "Tablet"],
    ),
    ("Object", "Electronics", "Display", "Screen", &["Monitor", "Tv-screen"]),
    ("Object", "Electronics", "Small", "Gadget", &["Phone", "Remote-control", "Hair-dryer", "Speaker"]),
    (
        "Object",
        "Kitchenware",
        "Cookware",
        "Pot",
        &["Pot", "Pan", "Kitchen-utensil", "Knife-block", "Chopping-board"],
    ),
    ("Object", "Kitchenware", "Tableware", "Dish", &["Plate", "Bowl", "Cup", "Bottle", "Utensil-holder"]),
    (
        "Object",
        "Kitchenware",
        "Appliance",
        "Machine",
        &["Microwave", "Refrigerator", "Cooktop", "Small-appliance", "Major-appliance"],
    ),
    ("Object", "Textile", "Apparel", "Garment", &["Clothing", "Set-of-clothing", "Shoe"]),
    ("Object", "Textile", "Cloth", "Linen", &["Towel", "Cloth", "Tissue-paper", "Paper-towel"]),
    ("Object", "Personal", "Carry", "Bag", &["Bag", "Backpack", "Handbag", "Umbrella"]),
    ("Object", "Personal", "Care", "Toiletry", &["Toothbrush", "Soap"]),
    ("Object", "Storage", "Container", "Box", &["Box", "Basket", "Bin", "Book"]),
    ("Other", "Misc", "Assorted", "Sports", &["Exercise-ball", "Bike"]),
    ("Other", "Sanitary", "Bath", "Fixture", &["Toilet", "Bathtub", "Shower-stall"]),
    ("Void", "Unlabeled", "Unknown", "Undefined", &["Undefined"]),
];

/// Root-to-leaf name paths of a five-level, 102-leaf indoor taxonomy modelled
/// on the Replica label set.
pub fn replica_style_paths() -> Vec<Vec<&'static str>> {
    REPLICA_STYLE
        .iter()
        .flat_map(|&(a, b, c, d, leaves)| leaves.iter().map(move |&leaf| vec![a, b, c, d, leaf]))
        .collect()
}

/// The 102 leaf labels of [`replica_style_paths`], in path order.
pub fn replica_style_labels() -> Vec<String> {
    replica_style_paths().into_iter().map(|p| p[4].to_string()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn hundred_and_two_unique_leaves() {
        let labels = replica_style_labels();
        assert_eq!(labels.len(), 102);
        assert_eq!(labels.iter().collect::<BTreeSet<_>>().len(), 102);
    }
}
