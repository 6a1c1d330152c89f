/// A co-localization dataset built by merging Tiny ImageNet categories.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetSpec {
    pub name: &'static str,
    pub aliases: &'static [&'static str],
    pub subcategory_names: &'static [&'static str],
    pub train_count: usize,
    pub test_count: usize,
    pub input_size: usize,
    pub has_boxes: bool,
}

const fn group(
    name: &'static str,
    aliases: &'static [&'static str],
    subcategory_names: &'static [&'static str],
    train_count: usize,
    test_count: usize,
) -> DatasetSpec {
    DatasetSpec {
        name,
        aliases,
        subcategory_names,
        train_count,
        test_count,
        input_size: 64,
        has_boxes: true,
    }
}

static BUILTIN: [DatasetSpec; 6] = [
    group(
        "Artiodactyla",
        &["Four-legs animals"],
        &["bison", "ox", "bighorn", "gazelle", "arabian camel"],
        2500,
        250,
    ),
    group("Bottle", &[], &["pop bottle", "beer bottle"], 1000, 100),
    group(
        "Bird",
        &[],
        &["albatross", "black stork", "goose"],
        1500,
        150,
    ),
    group(
        "Cat",
        &[],
        &["tabby", "persian cat", "egyptian cat", "cougar"],
        2000,
        200,
    ),
    group(
        "Dog",
        &[],
        &[
            "standard poodle",
            "yorkshire",
            "golden retriever",
            "labrador retriever",
            "german shephered",
            "chihuahua",
        ],
        3000,
        300,
    ),
    group(
        "Vehicle",
        &[],
        &[
            "convertible",
            "school bus",
            "trolleybus",
            "sports car",
            "police van",
            "moving van",
            "limousine",
            "beach wagon",
        ],
        4000,
        400,
    ),
];

pub fn builtin_specs() -> &'static [DatasetSpec] {
    &BUILTIN
}

fn fold(s: &str) -> String {
    s.split_whitespace()
        .map(|w| w.to_lowercase())
        .collect::<Vec<_>>()
        .join(" ")
        .replace(['_', '-'], " ")
}

/// Looks a group up by name or alias, ignoring case, `-` and `_`.
pub fn find_spec(name: &str) -> Option<&'static DatasetSpec> {
    let want = fold(name);
    BUILTIN
        .iter()
        .find(|s| fold(s.name) == want || s.aliases.iter().any(|a| fold(a) == want))
}

/// WordNet synonym that a listed subcategory name stands for, when the
/// listed spelling is not itself a synonym.
pub(crate) fn wordnet_alias(subcategory: &str) -> Option<&'static str> {
    match subcategory {
        "yorkshire" => Some("yorkshire terrier"),
        "german shephered" => Some("german shepherd"),
        _ => None,
    }
}
