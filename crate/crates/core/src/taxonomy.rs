//! Bias taxonomy: categories of words and the caption templates that turn
//! each word into a text-encoder prompt.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const BUNDLED: &str = include_str!("../data/taxonomy.json");

/// Words whose leading sound is a consonant despite a vowel letter.
const A_EXCEPTIONS: [&str; 4] = ["user", "unicorn", "european", "one"];
/// Words whose leading sound is a vowel despite a consonant letter.
const AN_EXCEPTIONS: [&str; 4] = ["hour", "honest", "heir", "mba"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum WordKind {
    Adjective,
    Noun,
    Activity,
    Object,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CategoryName {
    Appearance,
    Behavioral,
    EducationWealth,
    CriminalJustice,
    Healthcare,
    PortrayalInMedia,
    Political,
    Religion,
    Occupation,
    Stereotyping,
}

impl CategoryName {
    pub const ALL: [CategoryName; 10] = [
        CategoryName::Appearance,
        CategoryName::Behavioral,
        CategoryName::EducationWealth,
        CategoryName::CriminalJustice,
        CategoryName::Healthcare,
        CategoryName::PortrayalInMedia,
        CategoryName::Political,
        CategoryName::Religion,
        CategoryName::Occupation,
        CategoryName::Stereotyping,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CategoryName::Appearance => "Appearance",
            CategoryName::Behavioral => "Behavioral",
            CategoryName::EducationWealth => "EducationWealth",
            CategoryName::CriminalJustice => "CriminalJustice",
            CategoryName::Healthcare => "Healthcare",
            CategoryName::PortrayalInMedia => "PortrayalInMedia",
            CategoryName::Political => "Political",
            CategoryName::Religion => "Religion",
            CategoryName::Occupation => "Occupation",
            CategoryName::Stereotyping => "Stereotyping",
        }
    }
}

impl fmt::Display for CategoryName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for CategoryName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CategoryName::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Schema(format!("unknown category {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TaxonomyWord {
    pub text: String,
    pub kind: WordKind,
}

impl TaxonomyWord {
    pub fn new(text: impl Into<String>, kind: WordKind) -> Self {
        TaxonomyWord {
            text: text.into(),
            kind,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaxonomyCategory {
    #[serde(rename = "category")]
    pub name: CategoryName,
    pub words: Vec<TaxonomyWord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Caption {
    pub text: String,
    pub source_word: TaxonomyWord,
    pub category: CategoryName,
}

/// Ordered categories with validated word lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Taxonomy {
    categories: Vec<TaxonomyCategory>,
}

impl Taxonomy {
    pub fn new(categories: Vec<TaxonomyCategory>) -> Result<Self> {
        let mut names = HashSet::new();
        for cat in &categories {
            if !names.insert(cat.name) {
                return Err(Error::Schema(format!(
                    "category {} appears twice",
                    cat.name
                )));
            }
            if cat.words.is_empty() {
                return Err(Error::Schema(format!("category {} has no words", cat.name)));
            }
            let mut seen = HashSet::new();
            for w in &cat.words {
                if w.text.trim().is_empty() {
                    return Err(Error::Schema(format!(
                        "empty word in category {}",
                        cat.name
                    )));
                }
                if !seen.insert(w.text.as_str()) {
                    return Err(Error::Schema(format!(
                        "duplicate word {:?} in category {}",
                        w.text, cat.name
                    )));
                }
            }
        }
        Ok(Taxonomy { categories })
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let categories: Vec<TaxonomyCategory> =
            serde_json::from_str(json).map_err(|e| Error::Schema(e.to_string()))?;
        Taxonomy::new(categories)
    }

    /// The taxonomy shipped with the crate.
    pub fn bundled() -> Self {
        Taxonomy::from_json(BUNDLED).expect("bundled taxonomy is valid")
    }

    pub fn bundled_json() -> &'static str {
        BUNDLED
    }

    pub fn categories(&self) -> &[TaxonomyCategory] {
        &self.categories
    }

    pub fn category(&self, name: CategoryName) -> Option<&TaxonomyCategory> {
        self.categories.iter().find(|c| c.name == name)
    }

    pub fn word_count(&self) -> usize {
        self.categories.iter().map(|c| c.words.len()).sum()
    }

    /// Captions for every word, category by category in file order.
    pub fn captions(&self) -> Vec<Caption> {
        self.categories
            .iter()
            .flat_map(|c| c.words.iter().map(move |w| render_caption_in(w, c.name)))
            .collect()
    }
}

pub fn load_taxonomy(path: &Path) -> Result<Taxonomy> {
    let json = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Taxonomy::from_json(&json).map_err(|e| e.context(path.display().to_string()))
}

/// Indefinite article for a word, judged on its first token.
pub fn article(word: &str) -> &'static str {
    let first = word
        .split(|c: char| c.is_whitespace() || c == '-')
        .find(|t| !t.is_empty())
        .unwrap_or("")
        .to_lowercase();
    if AN_EXCEPTIONS.contains(&first.as_str()) {
        return "an";
    }
    if A_EXCEPTIONS.contains(&first.as_str()) {
        return "a";
    }
    match first.chars().next() {
        Some('a' | 'e' | 'i' | 'o' | 'u') => "an",
        _ => "a",
    }
}

/// Prompt text for one word; pure and deterministic.
pub fn caption_text(word: &TaxonomyWord) -> String {
    let w = &word.text;
    match word.kind {
        WordKind::Adjective => format!("a photo of {} {w} person", article(w)),
        WordKind::Noun | WordKind::Object => format!("a photo of {} {w}", article(w)),
        WordKind::Activity => format!("a photo of a person who is {w}"),
    }
}

pub fn render_caption_in(word: &TaxonomyWord, category: CategoryName) -> Caption {
    Caption {
        text: caption_text(word),
        source_word: word.clone(),
        category,
    }
}

/// One line of the caption manifest exchanged with the text encoder: the
/// encoder's output rows must follow manifest order exactly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub caption: String,
    pub word: String,
    pub kind: WordKind,
    pub category: CategoryName,
}

impl From<&Caption> for ManifestEntry {
    fn from(c: &Caption) -> Self {
        ManifestEntry {
            caption: c.text.clone(),
            word: c.source_word.text.clone(),
            kind: c.source_word.kind,
            category: c.category,
        }
    }
}

pub fn caption_manifest(taxonomy: &Taxonomy) -> Vec<ManifestEntry> {
    taxonomy
        .captions()
        .iter()
        .map(ManifestEntry::from)
        .collect()
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let json = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&json).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// First position where two caption lists disagree, with the caption each
/// side holds there (`None` past its end).
pub fn first_caption_mismatch<A: AsRef<str>, B: AsRef<str>>(
    expected: &[A],
    found: &[B],
) -> Option<(usize, Option<String>, Option<String>)> {
    let n = expected.len().max(found.len());
    (0..n).find_map(|i| {
        let e = expected.get(i).map(|c| c.as_ref());
        let f = found.get(i).map(|c| c.as_ref());
        (e != f).then(|| (i, e.map(str::to_string), f.map(str::to_string)))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn bundled_has_ten_categories() {
        let t = Taxonomy::bundled();
        assert_eq!(t.categories().len(), 10);
        let names: Vec<_> = t.categories().iter().map(|c| c.name).collect();
        assert_eq!(names, CategoryName::ALL);
    }

    #[test]
    fn bundled_appearance_words() {
        let t = Taxonomy::bundled();
        let app = t.category(CategoryName::Appearance).unwrap();
        assert_eq!(app.words.len(), 25);
        let first: Vec<_> = app.words[..4].iter().map(|w| w.text.as_str()).collect();
        assert_eq!(first, ["attractive", "beautiful", "chubby", "cute"]);
    }

    // Per-category sizes counted from the source table by a standalone script
    // (405 table words plus 5 Stereotyping words).
    #[test]
    fn bundled_word_counts() {
        let t = Taxonomy::bundled();
        let sizes: Vec<_> = t.categories().iter().map(|c| c.words.len()).collect();
        assert_eq!(sizes, [25, 77, 23, 28, 14, 23, 24, 25, 166, 5]);
        assert_eq!(t.word_count(), 410);
        assert_eq!(t.captions().len(), 410);
    }

    #[test]
    fn bundled_category_boundaries_verbatim() {
        let t = Taxonomy::bundled();
        let ends = [
            (CategoryName::Appearance, "attractive", "young"),
            (CategoryName::Behavioral, "aggressive", "well-spoken"),
            (
                CategoryName::EducationWealth,
                "disadvantaged",
                "working-class",
            ),
            (CategoryName::CriminalJustice, "addict", "violent"),
            (CategoryName::Healthcare, "addicted", "abortion seeking"),
            (CategoryName::PortrayalInMedia, "backward", "urban"),
            (CategoryName::Political, "activist", "socialist"),
            (CategoryName::Religion, "agnostic", "traditionalist"),
            (CategoryName::Occupation, "CEO", "writer"),
            (CategoryName::Stereotyping, "redneck", "geek"),
        ];
        for (name, first, last) in ends {
            let c = t.category(name).unwrap();
            assert_eq!(c.words.first().unwrap().text, first, "{name}");
            assert_eq!(c.words.last().unwrap().text, last, "{name}");
        }
    }

    #[test]
    fn unknown_category_is_schema_error() {
        let json = r#"[{"category": "Foo", "words": [{"text": "x", "kind": "Noun"}]}]"#;
        assert!(matches!(Taxonomy::from_json(json), Err(Error::Schema(_))));
    }

    #[test]
    fn unknown_kind_is_schema_error() {
        let json = r#"[{"category": "Religion", "words": [{"text": "x", "kind": "Verb"}]}]"#;
        assert!(matches!(Taxonomy::from_json(json), Err(Error::Schema(_))));
    }

    #[test]
    fn duplicate_word_is_schema_error() {
        let json = r#"[{"category": "Religion", "words": [
            {"text": "hindu", "kind": "Noun"}, {"text": "hindu", "kind": "Adjective"}]}]"#;
        assert!(matches!(Taxonomy::from_json(json), Err(Error::Schema(_))));
    }

    #[test]
    fn rendered_captions_table() {
        use WordKind::*;
        let table = [
            ("ambitious", Adjective, "a photo of an ambitious person"),
            ("nurse", Noun, "a photo of a nurse"),
            ("juggling", Activity, "a photo of a person who is juggling"),
            ("attractive", Adjective, "a photo of an attractive person"),
            ("chubby", Adjective, "a photo of a chubby person"),
            ("elegant", Adjective, "a photo of an elegant person"),
            ("old", Adjective, "a photo of an old person"),
            ("ugly", Adjective, "a photo of an ugly person"),
            ("intelligent", Adjective, "a photo of an intelligent person"),
            ("CEO", Noun, "a photo of a CEO"),
            ("actor", Noun, "a photo of an actor"),
            ("engineer", Noun, "a photo of an engineer"),
            ("umpire", Noun, "a photo of an umpire"),
            ("delivery man", Noun, "a photo of a delivery man"),
            ("european", Adjective, "a photo of a european person"),
            ("user", Noun, "a photo of a user"),
            ("honest", Adjective, "a photo of an honest person"),
            ("hour", Object, "a photo of an hour"),
            ("MBA", Noun, "a photo of an MBA"),
            ("umbrella", Object, "a photo of an umbrella"),
            (
                "mentally ill",
                Adjective,
                "a photo of a mentally ill person",
            ),
            ("anti-american", Noun, "a photo of an anti-american"),
            (
                "painting a wall",
                Activity,
                "a photo of a person who is painting a wall",
            ),
        ];
        for (text, kind, expected) in table {
            assert_eq!(caption_text(&TaxonomyWord::new(text, kind)), expected);
        }
    }

    #[test]
    fn manifest_mismatch_positions() {
        let m = caption_manifest(&Taxonomy::bundled());
        assert_eq!(m.len(), 410);
        assert_eq!(m[0].caption, "a photo of an attractive person");
        let captions: Vec<&str> = m.iter().map(|e| e.caption.as_str()).collect();
        assert_eq!(first_caption_mismatch(&captions, &captions), None);
        let mut swapped = captions.clone();
        swapped.swap(3, 4);
        assert_eq!(first_caption_mismatch(&captions, &swapped).unwrap().0, 3);
        assert_eq!(
            first_caption_mismatch(&captions, &captions[..400]),
            Some((400, Some(captions[400].to_string()), None))
        );
    }

    #[test]
    fn render_keeps_source() {
        let w = TaxonomyWord::new("nurse", WordKind::Noun);
        let c = render_caption_in(&w, CategoryName::Occupation);
        assert_eq!(c.source_word, w);
        assert_eq!(c.category, CategoryName::Occupation);
    }

    fn any_kind() -> impl Strategy<Value = WordKind> {
        prop_oneof![
            Just(WordKind::Adjective),
            Just(WordKind::Noun),
            Just(WordKind::Activity),
            Just(WordKind::Object),
        ]
    }

    proptest! {
        #[test]
        fn every_caption_starts_with_a_photo_of(text in "[a-zA-Z][a-z -]{0,20}", kind in any_kind()) {
            let w = TaxonomyWord::new(text, kind);
            let c = caption_text(&w);
            prop_assert!(c.starts_with("a photo of"));
            prop_assert_eq!(c, caption_text(&w));
        }

        #[test]
        fn article_follows_first_letter(text in "[a-z][a-z]{0,12}") {
            prop_assume!(!A_EXCEPTIONS.contains(&text.as_str()));
            prop_assume!(!AN_EXCEPTIONS.contains(&text.as_str()));
            let vowel = matches!(text.chars().next(), Some('a' | 'e' | 'i' | 'o' | 'u'));
            prop_assert_eq!(article(&text), if vowel { "an" } else { "a" });
        }
    }
}
