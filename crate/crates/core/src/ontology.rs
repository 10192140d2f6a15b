//! The annotation ontology: eleven subclasses grouped under three main classes.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// One of the eleven options a worker can pick for a term group.
///
/// Declaration order is the canonical index order: the eight Plutchik
/// emotions first, then the two intensifying subclasses, then `None`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subclass {
    Joy,
    Trust,
    Fear,
    Surprise,
    Sadness,
    Disgust,
    Anger,
    Anticipation,
    Amplifying,
    Weakening,
    None,
}

impl Subclass {
    pub const COUNT: usize = 11;

    pub const ALL: [Subclass; 11] = [
        Subclass::Joy,
        Subclass::Trust,
        Subclass::Fear,
        Subclass::Surprise,
        Subclass::Sadness,
        Subclass::Disgust,
        Subclass::Anger,
        Subclass::Anticipation,
        Subclass::Amplifying,
        Subclass::Weakening,
        Subclass::None,
    ];

    pub const EMOTIONS: [Subclass; 8] = [
        Subclass::Joy,
        Subclass::Trust,
        Subclass::Fear,
        Subclass::Surprise,
        Subclass::Sadness,
        Subclass::Disgust,
        Subclass::Anger,
        Subclass::Anticipation,
    ];

    /// Zero-based position in [`Subclass::ALL`].
    pub fn position(self) -> usize {
        self as usize
    }

    /// One-based index: emotions 1..=8, intensifying 9..=10, none 11.
    pub fn index(self) -> usize {
        self.position() + 1
    }

    pub fn from_position(position: usize) -> Option<Subclass> {
        Self::ALL.get(position).copied()
    }

    pub fn main_class(self) -> MainClass {
        match self {
            Subclass::Amplifying | Subclass::Weakening => MainClass::Intensifying,
            Subclass::None => MainClass::None,
            _ => MainClass::Emotion,
        }
    }

    pub fn is_emotion(self) -> bool {
        self.main_class() == MainClass::Emotion
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Subclass::Joy => "joy",
            Subclass::Trust => "trust",
            Subclass::Fear => "fear",
            Subclass::Surprise => "surprise",
            Subclass::Sadness => "sadness",
            Subclass::Disgust => "disgust",
            Subclass::Anger => "anger",
            Subclass::Anticipation => "anticipation",
            Subclass::Amplifying => "amplifying",
            Subclass::Weakening => "weakening",
            Subclass::None => "none",
        }
    }
}

impl fmt::Display for Subclass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown subclass `{0}`")]
pub struct UnknownSubclass(pub String);

impl FromStr for Subclass {
    type Err = UnknownSubclass;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lowered = s.trim().to_ascii_lowercase();
        Subclass::ALL.into_iter().find(|sc| sc.as_str() == lowered).ok_or_else(|| UnknownSubclass(s.to_string()))
    }
}

/// Parent class of a [`Subclass`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MainClass {
    Emotion,
    Intensifying,
    None,
}

impl MainClass {
    pub const ALL: [MainClass; 3] = [MainClass::Emotion, MainClass::Intensifying, MainClass::None];

    pub fn as_str(self) -> &'static str {
        match self {
            MainClass::Emotion => "emotion",
            MainClass::Intensifying => "intensifying",
            MainClass::None => "none",
        }
    }

    /// Subclasses that map to this main class, in index order.
    pub fn subclasses(self) -> impl Iterator<Item = Subclass> {
        Subclass::ALL.into_iter().filter(move |s| s.main_class() == self)
    }
}

impl fmt::Display for MainClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MainClass {
    type Err = UnknownSubclass;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "emotion" => Ok(MainClass::Emotion),
            "intensifying" => Ok(MainClass::Intensifying),
            "none" => Ok(MainClass::None),
            _ => Err(UnknownSubclass(s.to_string())),
        }
    }
}

/// Per-subclass tally, indexed by [`Subclass::position`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SubclassCounts([u32; Subclass::COUNT]);

impl SubclassCounts {
    pub fn new(counts: [u32; Subclass::COUNT]) -> Self {
        SubclassCounts(counts)
    }

    pub fn from_pairs<I: IntoIterator<Item = (Subclass, u32)>>(pairs: I) -> Self {
        let mut counts = SubclassCounts::default();
        for (sc, n) in pairs {
            counts.0[sc.position()] += n;
        }
        counts
    }

    pub fn get(&self, subclass: Subclass) -> u32 {
        self.0[subclass.position()]
    }

    pub fn increment(&mut self, subclass: Subclass) {
        self.0[subclass.position()] += 1;
    }

    pub fn total(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn max(&self) -> u32 {
        self.0.iter().copied().max().unwrap_or(0)
    }

    pub fn as_array(&self) -> &[u32; Subclass::COUNT] {
        &self.0
    }

    pub fn iter(&self) -> impl Iterator<Item = (Subclass, u32)> + '_ {
        Subclass::ALL.into_iter().zip(self.0.iter().copied())
    }

    /// Counts of the eight emotions only, in index order.
    pub fn emotions(&self) -> [u32; 8] {
        let mut out = [0; 8];
        out.copy_from_slice(&self.0[..8]);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indices_follow_the_documented_layout() {
        for (i, sc) in Subclass::ALL.iter().enumerate() {
            assert_eq!(sc.index(), i + 1);
        }
        assert!(Subclass::EMOTIONS.iter().all(|s| (1..=8).contains(&s.index())));
        assert_eq!(Subclass::Amplifying.index(), 9);
        assert_eq!(Subclass::Weakening.index(), 10);
        assert_eq!(Subclass::None.index(), 11);
    }

    #[test]
    fn main_class_mapping_is_total() {
        assert_eq!(MainClass::Emotion.subclasses().count(), 8);
        assert_eq!(
            MainClass::Intensifying.subclasses().collect::<Vec<_>>(),
            vec![Subclass::Amplifying, Subclass::Weakening]
        );
        assert_eq!(MainClass::None.subclasses().collect::<Vec<_>>(), vec![Subclass::None]);
    }

    #[test]
    fn parse_round_trips_names() {
        for sc in Subclass::ALL {
            assert_eq!(sc.as_str().parse::<Subclass>().unwrap(), sc);
        }
        assert_eq!("JOY".parse::<Subclass>().unwrap(), Subclass::Joy);
        assert!("love".parse::<Subclass>().is_err());
        assert_eq!(serde_json::to_string(&Subclass::Anticipation).unwrap(), "\"anticipation\"");
    }
}
