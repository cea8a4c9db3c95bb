//! Registry of the 104 segmented structures.
//!
//! The table lives in `data/structures.csv` and is embedded at build time. IDs
//! follow the listing order of the structure catalogue, 1-based. Model parts are
//! contiguous ID ranges (1–21, 22–42, 43–63, 64–84, 85–104); only the part sizes
//! are fixed by the source study, the assignment itself is a convention of this
//! crate.
//!
//! The BTCV comparison subset has 13 members. The catalogue heading for that list
//! says "12" but enumerates differently from the body text; the 13 abdominal
//! labels of the BTCV challenge (including esophagus) are used here.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::Serialize;

use crate::error::{Error, Result};

pub const NUM_STRUCTURES: usize = 104;
pub const MAX_STRUCTURE_ID: u16 = 104;
pub const NUM_PARTS: u8 = 5;

const REGISTRY_CSV: &str = include_str!("../data/structures.csv");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Organ,
    Bone,
    Muscle,
    Vessel,
    Other,
}

impl Group {
    pub fn as_str(self) -> &'static str {
        match self {
            Group::Organ => "organ",
            Group::Bone => "bone",
            Group::Muscle => "muscle",
            Group::Vessel => "vessel",
            Group::Other => "other",
        }
    }
}

impl FromStr for Group {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "organ" => Group::Organ,
            "bone" => Group::Bone,
            "muscle" => Group::Muscle,
            "vessel" => Group::Vessel,
            "other" => Group::Other,
            _ => return Err(Error::invalid(format!("unknown group {s:?}"))),
        })
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Structure {
    pub id: u16,
    pub name: String,
    pub group: Group,
    pub part: u8,
    /// Smallest anatomically plausible volume; smaller segmentations count as failures.
    pub cutoff_ml: f64,
    pub btcv: bool,
}

impl Structure {
    /// File-name form of the name, e.g. `rib_left_1`, `clavicula_left`.
    pub fn file_stem(&self) -> String {
        normalize_name(&self.name).replace(' ', "_")
    }
}

#[derive(Debug)]
pub struct StructureRegistry {
    entries: Vec<Structure>,
    by_name: HashMap<String, u16>,
}

/// Canonical lookup form: lowercase, accents folded, `_` and runs of whitespace
/// collapsed to a single space, and the "vena" spelling mapped to "vein".
pub fn normalize_name(name: &str) -> String {
    let folded: String = name
        .chars()
        .map(|c| match c {
            'í' | 'Í' | 'ì' | 'î' | 'ï' => 'i',
            'á' | 'à' | 'â' | 'ä' => 'a',
            'é' | 'è' | 'ê' | 'ë' => 'e',
            'ó' | 'ò' | 'ô' | 'ö' => 'o',
            'ú' | 'ù' | 'û' | 'ü' => 'u',
            '_' | '-' => ' ',
            c => c.to_ascii_lowercase(),
        })
        .collect();
    folded
        .split_whitespace()
        .map(|w| if w == "vena" { "vein" } else { w })
        .collect::<Vec<_>>()
        .join(" ")
}

impl StructureRegistry {
    /// The built-in registry.
    pub fn global() -> &'static StructureRegistry {
        static REGISTRY: OnceLock<StructureRegistry> = OnceLock::new();
        REGISTRY.get_or_init(|| {
            StructureRegistry::from_csv(REGISTRY_CSV).expect("embedded registry is well-formed")
        })
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().unwrap_or_default();
        if header.trim() != "id,name,group,part,cutoff_ml,btcv" {
            return Err(Error::invalid(format!("unexpected registry header {header:?}")));
        }
        let mut entries = Vec::with_capacity(NUM_STRUCTURES);
        for (row, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let bad = |what: &str| Error::invalid(format!("registry row {}: bad {what}", row + 1));
            if fields.len() != 6 {
                return Err(bad("field count"));
            }
            entries.push(Structure {
                id: fields[0].parse().map_err(|_| bad("id"))?,
                name: fields[1].to_string(),
                group: fields[2].parse()?,
                part: fields[3].parse().map_err(|_| bad("part"))?,
                cutoff_ml: fields[4].parse().map_err(|_| bad("cutoff"))?,
                btcv: match fields[5] {
                    "1" => true,
                    "0" => false,
                    _ => return Err(bad("btcv flag")),
                },
            });
        }
        Self::from_entries(entries)
    }

    pub fn from_entries(entries: Vec<Structure>) -> Result<Self> {
        if entries.len() != NUM_STRUCTURES {
            return Err(Error::invalid(format!(
                "registry must have {NUM_STRUCTURES} entries, found {}",
                entries.len()
            )));
        }
        let mut by_name = HashMap::new();
        for (i, e) in entries.iter().enumerate() {
            if e.id as usize != i + 1 {
                return Err(Error::invalid(format!(
                    "registry IDs must be 1..={NUM_STRUCTURES} in order; row {} has id {}",
                    i + 1,
                    e.id
                )));
            }
            if !(1..=NUM_PARTS).contains(&e.part) {
                return Err(Error::invalid(format!("{}: part {} out of range", e.name, e.part)));
            }
            if e.cutoff_ml.is_nan() || e.cutoff_ml < 0.0 {
                return Err(Error::invalid(format!("{}: negative cutoff", e.name)));
            }
            if by_name.insert(normalize_name(&e.name), e.id).is_some() {
                return Err(Error::invalid(format!("duplicate structure name {:?}", e.name)));
            }
        }
        Ok(StructureRegistry { entries, by_name })
    }

    pub fn entries(&self) -> &[Structure] {
        &self.entries
    }

    pub fn get(&self, id: u16) -> Option<&Structure> {
        (id as usize).checked_sub(1).and_then(|i| self.entries.get(i))
    }

    pub fn is_registered(&self, id: u16) -> bool {
        self.get(id).is_some()
    }

    pub fn by_id(&self, id: u16) -> Result<&Structure> {
        self.get(id).ok_or_else(|| Error::UnknownStructure {
            key: id.to_string(),
            suggestions: Vec::new(),
        })
    }

    /// Look up by numeric ID or by name (case-insensitive; `_` and space are
    /// interchangeable). Unknown names report up to three close matches.
    pub fn lookup(&self, key: &str) -> Result<&Structure> {
        if let Ok(id) = key.trim().parse::<u16>() {
            return self.by_id(id);
        }
        let norm = normalize_name(key);
        if let Some(&id) = self.by_name.get(&norm) {
            return Ok(&self.entries[id as usize - 1]);
        }
        let mut scored: Vec<(usize, &str)> = self
            .entries
            .iter()
            .map(|e| (strsim::levenshtein(&norm, &normalize_name(&e.name)), e.name.as_str()))
            .collect();
        scored.sort();
        let suggestions = scored
            .iter()
            .take_while(|(d, _)| *d <= norm.len().max(4) / 2)
            .take(3)
            .map(|(_, n)| n.to_string())
            .collect();
        Err(Error::UnknownStructure {
            key: key.to_string(),
            suggestions,
        })
    }

    pub fn btcv_subset(&self) -> BTreeSet<u16> {
        self.entries.iter().filter(|e| e.btcv).map(|e| e.id).collect()
    }

    pub fn part_ids(&self, part: u8) -> Vec<u16> {
        self.entries
            .iter()
            .filter(|e| e.part == part)
            .map(|e| e.id)
            .collect()
    }

    /// CSV export, identical in layout to the embedded table.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("id,name,group,part,cutoff_ml,btcv\n");
        for e in &self.entries {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                e.id,
                e.name,
                e.group,
                e.part,
                e.cutoff_ml,
                u8::from(e.btcv)
            ));
        }
        out
    }
}
