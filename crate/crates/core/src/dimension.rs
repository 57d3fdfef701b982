use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// The three rated dimensions, in the order subjects rate them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    AudioQuality,
    Consistency,
    Overall,
}

impl Dimension {
    pub const ALL: [Dimension; 3] = [
        Dimension::AudioQuality,
        Dimension::Consistency,
        Dimension::Overall,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Dimension::AudioQuality => "audio_quality",
            Dimension::Consistency => "consistency",
            Dimension::Overall => "overall",
        }
    }

    pub fn short_name(self) -> &'static str {
        match self {
            Dimension::AudioQuality => "AQ",
            Dimension::Consistency => "CC",
            Dimension::Overall => "OV",
        }
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Dimension {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Dimension::ALL
            .into_iter()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| format!("unknown dimension `{s}`"))
    }
}

/// One value per [`Dimension`].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PerDimension<T> {
    pub audio_quality: T,
    pub consistency: T,
    pub overall: T,
}

impl<T> PerDimension<T> {
    pub fn from_fn(mut f: impl FnMut(Dimension) -> T) -> Self {
        Self {
            audio_quality: f(Dimension::AudioQuality),
            consistency: f(Dimension::Consistency),
            overall: f(Dimension::Overall),
        }
    }

    pub fn try_from_fn<E>(mut f: impl FnMut(Dimension) -> Result<T, E>) -> Result<Self, E> {
        Ok(Self {
            audio_quality: f(Dimension::AudioQuality)?,
            consistency: f(Dimension::Consistency)?,
            overall: f(Dimension::Overall)?,
        })
    }

    pub fn get(&self, dim: Dimension) -> &T {
        match dim {
            Dimension::AudioQuality => &self.audio_quality,
            Dimension::Consistency => &self.consistency,
            Dimension::Overall => &self.overall,
        }
    }

    pub fn get_mut(&mut self, dim: Dimension) -> &mut T {
        match dim {
            Dimension::AudioQuality => &mut self.audio_quality,
            Dimension::Consistency => &mut self.consistency,
            Dimension::Overall => &mut self.overall,
        }
    }

    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> PerDimension<U> {
        PerDimension::from_fn(|d| f(self.get(d)))
    }
}
