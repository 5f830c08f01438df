use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::PublicationRecord;

const DEFAULT_TAXONOMY: &str = include_str!("../../data/asjc.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Discipline {
    LifeSciences,
    PhysicalSciences,
    HealthSciences,
    SocialSciences,
}

impl Discipline {
    pub const ALL: [Discipline; 4] = [
        Discipline::LifeSciences,
        Discipline::PhysicalSciences,
        Discipline::HealthSciences,
        Discipline::SocialSciences,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Discipline::LifeSciences => "LifeSciences",
            Discipline::PhysicalSciences => "PhysicalSciences",
            Discipline::HealthSciences => "HealthSciences",
            Discipline::SocialSciences => "SocialSciences",
        }
    }

    pub fn parse(s: &str) -> Option<Discipline> {
        Discipline::ALL.into_iter().find(|d| d.as_str() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
enum DisciplineOrExcluded {
    LifeSciences,
    PhysicalSciences,
    HealthSciences,
    SocialSciences,
    Excluded,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AreaInfo {
    pub name: String,
    discipline: DisciplineOrExcluded,
}

impl AreaInfo {
    /// `None` for excluded areas.
    pub fn discipline(&self) -> Option<Discipline> {
        match self.discipline {
            DisciplineOrExcluded::LifeSciences => Some(Discipline::LifeSciences),
            DisciplineOrExcluded::PhysicalSciences => Some(Discipline::PhysicalSciences),
            DisciplineOrExcluded::HealthSciences => Some(Discipline::HealthSciences),
            DisciplineOrExcluded::SocialSciences => Some(Discipline::SocialSciences),
            DisciplineOrExcluded::Excluded => None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TaxonomyError {
    #[error("invalid taxonomy file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("area key `{0}` is not a four-digit code ending in 00")]
    BadArea(String),
}

/// ASJC area code → major discipline map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Taxonomy {
    areas: BTreeMap<u16, AreaInfo>,
}

#[derive(Deserialize)]
struct TaxonomyFile {
    areas: BTreeMap<String, AreaInfo>,
}

impl Taxonomy {
    pub fn from_toml_str(text: &str) -> Result<Self, TaxonomyError> {
        let file: TaxonomyFile = toml::from_str(text)?;
        let mut areas = BTreeMap::new();
        for (key, info) in file.areas {
            let code: u16 = key.parse().map_err(|_| TaxonomyError::BadArea(key.clone()))?;
            if !(1000..=9999).contains(&code) || !code.is_multiple_of(100) {
                return Err(TaxonomyError::BadArea(key));
            }
            areas.insert(code, info);
        }
        Ok(Taxonomy { areas })
    }

    /// Area entry for a four-digit ASJC code.
    pub fn lookup(&self, code: u16) -> Option<&AreaInfo> {
        if !(1000..=9999).contains(&code) {
            return None;
        }
        self.areas.get(&(code / 100 * 100))
    }

    pub fn areas(&self) -> impl Iterator<Item = (u16, &AreaInfo)> {
        self.areas.iter().map(|(k, v)| (*k, v))
    }
}

impl Default for Taxonomy {
    fn default() -> Self {
        Taxonomy::from_toml_str(DEFAULT_TAXONOMY).expect("bundled taxonomy parses")
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DisciplineWeights {
    pub weights: BTreeMap<Discipline, f64>,
    pub unknown_codes: Vec<u16>,
}

/// Half-counting generalised: a record spanning `k` distinct non-excluded
/// disciplines contributes `1/k` to each.
pub fn discipline_weights(record: &PublicationRecord, taxonomy: &Taxonomy) -> DisciplineWeights {
    let mut out = DisciplineWeights::default();
    let mut found: Vec<Discipline> = Vec::new();
    for &code in &record.subject_areas {
        match taxonomy.lookup(code) {
            Some(info) => {
                if let Some(d) = info.discipline() {
                    if !found.contains(&d) {
                        found.push(d);
                    }
                }
            }
            None => out.unknown_codes.push(code),
        }
    }
    if !found.is_empty() {
        let w = 1.0 / found.len() as f64;
        out.weights = found.into_iter().map(|d| (d, w)).collect();
    }
    out
}
