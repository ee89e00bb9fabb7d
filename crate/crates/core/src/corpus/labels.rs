use serde::Serialize;
use std::sync::OnceLock;

/// One letter of the alphabet.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LabelEntry {
    pub class_index: usize,
    pub ascii_name: String,
    pub codepoints: Vec<char>,
    pub romanization: String,
}

impl LabelEntry {
    pub fn unicode(&self) -> String {
        self.codepoints.iter().collect()
    }

    /// Codepoints as `U+XXXX` strings.
    pub fn unicode_hex(&self) -> Vec<String> {
        self.codepoints
            .iter()
            .map(|c| format!("U+{:04X}", *c as u32))
            .collect()
    }
}

/// Ordered class table. Class indices are positions in the table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSet {
    entries: Vec<LabelEntry>,
}

const LABIALIZATION: char = '\u{2D6F}';

// (ascii name, base codepoint, labialized, romanization)
const IRCAM: [(&str, char, bool, &str); 33] = [
    ("ya", '\u{2D30}', false, "a"),
    ("yab", '\u{2D31}', false, "b"),
    ("yag", '\u{2D33}', false, "g"),
    ("yagw", '\u{2D33}', true, "gʷ"),
    ("yad", '\u{2D37}', false, "d"),
    ("yadd", '\u{2D39}', false, "ḍ"),
    ("yey", '\u{2D3B}', false, "e"),
    ("yaf", '\u{2D3C}', false, "f"),
    ("yak", '\u{2D3D}', false, "k"),
    ("yakw", '\u{2D3D}', true, "kʷ"),
    ("yah", '\u{2D40}', false, "h"),
    ("yahh", '\u{2D43}', false, "ḥ"),
    ("yaa", '\u{2D44}', false, "ɛ"),
    ("yakh", '\u{2D45}', false, "x"),
    ("yaq", '\u{2D47}', false, "q"),
    ("yi", '\u{2D49}', false, "i"),
    ("yaj", '\u{2D4A}', false, "j"),
    ("yal", '\u{2D4D}', false, "l"),
    ("yam", '\u{2D4E}', false, "m"),
    ("yan", '\u{2D4F}', false, "n"),
    ("yu", '\u{2D53}', false, "u"),
    ("yar", '\u{2D54}', false, "r"),
    ("yarr", '\u{2D55}', false, "ṛ"),
    ("yagh", '\u{2D56}', false, "ɣ"),
    ("yas", '\u{2D59}', false, "s"),
    ("yass", '\u{2D5A}', false, "ṣ"),
    ("yash", '\u{2D5B}', false, "c"),
    ("yat", '\u{2D5C}', false, "t"),
    ("yatt", '\u{2D5F}', false, "ṭ"),
    ("yaw", '\u{2D61}', false, "w"),
    ("yay", '\u{2D62}', false, "y"),
    ("yaz", '\u{2D63}', false, "z"),
    ("yazz", '\u{2D65}', false, "ẓ"),
];

impl LabelSet {
    /// Build a table from `(ascii_name, codepoints, romanization)` rows.
    /// Returns `None` on duplicate names.
    pub fn from_rows<I>(rows: I) -> Option<Self>
    where
        I: IntoIterator<Item = (String, Vec<char>, String)>,
    {
        let mut entries: Vec<LabelEntry> = Vec::new();
        for (i, (ascii_name, codepoints, romanization)) in rows.into_iter().enumerate() {
            if entries.iter().any(|e| e.ascii_name == ascii_name) {
                return None;
            }
            entries.push(LabelEntry {
                class_index: i,
                ascii_name,
                codepoints,
                romanization,
            });
        }
        Some(Self { entries })
    }

    /// The 33-letter IRCAM Tifinagh alphabet.
    pub fn tifinagh() -> &'static LabelSet {
        static SET: OnceLock<LabelSet> = OnceLock::new();
        SET.get_or_init(|| {
            Self::from_rows(IRCAM.iter().map(|&(name, base, labial, roman)| {
                let mut cps = vec![base];
                if labial {
                    cps.push(LABIALIZATION);
                }
                (name.to_string(), cps, roman.to_string())
            }))
            .expect("IRCAM table has unique names")
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[LabelEntry] {
        &self.entries
    }

    pub fn get(&self, class_index: usize) -> Option<&LabelEntry> {
        self.entries.get(class_index)
    }

    pub fn index_of(&self, ascii_name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.ascii_name == ascii_name)
    }

    pub fn name(&self, class_index: usize) -> &str {
        &self.entries[class_index].ascii_name
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.ascii_name.as_str())
    }
}

impl Default for LabelSet {
    fn default() -> Self {
        Self::tifinagh().clone()
    }
}
