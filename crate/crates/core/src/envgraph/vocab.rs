//! Fixed synthetic vocabulary: special tokens, function words, landmark names.

use serde::{Deserialize, Serialize};

pub const PAD: u32 = 0;
pub const CLS: u32 = 1;
pub const SEP: u32 = 2;
pub const MASK: u32 = 3;
pub const IMG: u32 = 4;
pub const UNK: u32 = 5;

const SPECIALS: [&str; 6] = ["[PAD]", "[CLS]", "[SEP]", "[MASK]", "[IMG]", "[UNK]"];

/// Function words, in token-id order after the specials.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u32)]
pub enum Word {
    Walk = 6,
    Go,
    Head,
    Turn,
    Forward,
    Left,
    Right,
    Past,
    The,
    Then,
    And,
    Stop,
    At,
    A,
    Room,
    With,
}

const WORDS: [&str; 16] = [
    "walk", "go", "head", "turn", "forward", "left", "right", "past", "the", "then", "and", "stop", "at", "a", "room",
    "with",
];

const FIRST_CLASS: u32 = 6 + WORDS.len() as u32;

const OBJECT_NAMES: [&str; 40] = [
    "sofa",
    "table",
    "lamp",
    "bed",
    "sink",
    "plant",
    "painting",
    "mirror",
    "chair",
    "door",
    "window",
    "oven",
    "toilet",
    "shower",
    "desk",
    "shelf",
    "rug",
    "piano",
    "fireplace",
    "curtain",
    "clock",
    "vase",
    "television",
    "bathtub",
    "cabinet",
    "counter",
    "bench",
    "railing",
    "stairs",
    "fridge",
    "statue",
    "treadmill",
    "sculpture",
    "freezer",
    "antelope",
    "fountain",
    "aquarium",
    "harp",
    "telescope",
    "globe",
];

impl Word {
    pub fn id(self) -> u32 {
        self as u32
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    n_classes: usize,
}

impl Vocab {
    pub fn new(n_classes: usize) -> Self {
        Self { n_classes }
    }

    pub fn size(&self) -> usize {
        FIRST_CLASS as usize + self.n_classes
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn class_token(&self, class: u32) -> u32 {
        debug_assert!((class as usize) < self.n_classes);
        FIRST_CLASS + class
    }

    pub fn token_class(&self, token: u32) -> Option<u32> {
        (token >= FIRST_CLASS && ((token - FIRST_CLASS) as usize) < self.n_classes).then(|| token - FIRST_CLASS)
    }

    pub fn is_special(token: u32) -> bool {
        token < SPECIALS.len() as u32
    }

    /// Tokens a masking plan may substitute as a random replacement.
    pub fn content_range(&self) -> std::ops::Range<u32> {
        SPECIALS.len() as u32..self.size() as u32
    }

    pub fn word(&self, token: u32) -> String {
        let t = token as usize;
        if t < SPECIALS.len() {
            SPECIALS[t].to_string()
        } else if t < FIRST_CLASS as usize {
            WORDS[t - SPECIALS.len()].to_string()
        } else if let Some(c) = self.token_class(token) {
            match OBJECT_NAMES.get(c as usize) {
                Some(name) => (*name).to_string(),
                None => format!("object{c}"),
            }
        } else {
            SPECIALS[UNK as usize].to_string()
        }
    }

    pub fn decode(&self, tokens: &[u32]) -> String {
        tokens.iter().map(|&t| self.word(t)).collect::<Vec<_>>().join(" ")
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        text.split_whitespace()
            .map(|w| (0..self.size() as u32).find(|&t| self.word(t) == w).unwrap_or(UNK))
            .collect()
    }
}
