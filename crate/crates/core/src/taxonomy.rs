//! Canonical class taxonomy and per-dataset label harmonization.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::labelmap::{MapError, SemanticMap, VOID_ID};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TaxonomyError {
    #[error("taxonomy is empty")]
    Empty,
    #[error("taxonomy has {0} classes, at most 255 fit beside the void id")]
    TooManyClasses(usize),
    #[error("class id {found} at position {position}, ids must be dense from 0")]
    NonDenseIds { position: usize, found: u8 },
    #[error("duplicate class name {0:?}")]
    DuplicateName(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: target id {id} is outside the taxonomy")]
    TargetOutOfRange { line: usize, id: u32 },
    #[error("line {line}: unknown class name {name:?}")]
    UnknownName { line: usize, name: String },
    #[error("unmapped source ids: {}", format_unmapped(.0))]
    Unmapped(Vec<(u8, u64)>),
    #[error("unmapped colors: {}", format_colors(.0))]
    UnmappedColors(Vec<([u8; 3], u64)>),
    #[error(transparent)]
    Map(#[from] MapError),
}

fn format_unmapped(ids: &[(u8, u64)]) -> String {
    ids.iter()
        .map(|(id, n)| format!("{id} ({n} px)"))
        .collect::<Vec<_>>()
        .join(", ")
}

fn format_colors(colors: &[([u8; 3], u64)]) -> String {
    colors
        .iter()
        .map(|(c, n)| format!("({},{},{}) ({n} px)", c[0], c[1], c[2]))
        .collect::<Vec<_>>()
        .join(", ")
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ClassInfo {
    pub id: u8,
    pub name: String,
    /// Column header used in evaluation tables.
    pub short: String,
    pub evaluable: bool,
    pub color: [u8; 3],
}

/// Ordered list of canonical classes; ids are dense from 0 and 255 is void.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ClassTaxonomy {
    classes: Vec<ClassInfo>,
}

const URBAN: [(&str, &str, [u8; 3]); 19] = [
    ("road", "Rd", [128, 64, 128]),
    ("sidewalk", "Sdwk", [244, 35, 232]),
    ("building", "Bldg", [70, 70, 70]),
    ("wall", "Wall", [102, 102, 156]),
    ("fence", "Fnc", [190, 153, 153]),
    ("pole", "Pole", [153, 153, 153]),
    ("traffic light", "TLgt", [250, 170, 30]),
    ("traffic sign", "TSign", [220, 220, 0]),
    ("vegetation", "Veg", [107, 142, 35]),
    ("terrain", "Terr", [152, 251, 152]),
    ("sky", "Sky", [70, 130, 180]),
    ("person", "Pers", [220, 20, 60]),
    ("rider", "Rdr", [255, 0, 0]),
    ("car", "Car", [0, 0, 142]),
    ("truck", "Trck", [0, 0, 70]),
    ("bus", "Bus", [0, 60, 100]),
    ("train", "Train", [0, 80, 100]),
    ("motorcycle", "Mcy", [0, 0, 230]),
    ("bicycle", "Bike", [119, 11, 32]),
];

fn normalize_name(name: &str) -> String {
    name.trim().to_lowercase().replace(['_', '-'], " ")
}

impl Default for ClassTaxonomy {
    fn default() -> Self {
        Self::urban19()
    }
}

impl ClassTaxonomy {
    pub fn new(classes: Vec<ClassInfo>) -> Result<Self, TaxonomyError> {
        if classes.is_empty() {
            return Err(TaxonomyError::Empty);
        }
        if classes.len() > VOID_ID as usize {
            return Err(TaxonomyError::TooManyClasses(classes.len()));
        }
        let mut names = BTreeSet::new();
        for (position, c) in classes.iter().enumerate() {
            if c.id as usize != position {
                return Err(TaxonomyError::NonDenseIds {
                    position,
                    found: c.id,
                });
            }
            if !names.insert(normalize_name(&c.name)) {
                return Err(TaxonomyError::DuplicateName(c.name.clone()));
            }
        }
        Ok(Self { classes })
    }

    /// The 19 evaluable urban classes in the usual benchmark column order,
    /// with their conventional palette colours.
    pub fn urban19() -> Self {
        let classes = URBAN
            .iter()
            .enumerate()
            .map(|(i, (name, short, color))| ClassInfo {
                id: i as u8,
                name: name.to_string(),
                short: short.to_string(),
                evaluable: true,
                color: *color,
            })
            .collect();
        Self { classes }
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn void_id(&self) -> u8 {
        VOID_ID
    }

    pub fn classes(&self) -> &[ClassInfo] {
        &self.classes
    }

    pub fn class(&self, id: u8) -> Option<&ClassInfo> {
        self.classes.get(id as usize)
    }

    pub fn ids(&self) -> impl Iterator<Item = u8> + '_ {
        self.classes.iter().map(|c| c.id)
    }

    pub fn contains(&self, id: u8) -> bool {
        (id as usize) < self.classes.len()
    }

    /// Resolves a class name; `_`, `-` and case are ignored.
    pub fn id_of(&self, name: &str) -> Option<u8> {
        let wanted = normalize_name(name);
        self.classes
            .iter()
            .find(|c| normalize_name(&c.name) == wanted || normalize_name(&c.short) == wanted)
            .map(|c| c.id)
    }

    pub fn validate(&self, map: &SemanticMap) -> Result<(), MapError> {
        map.validate(self.classes.len())
    }

    pub fn palette(&self) -> Palette {
        Palette {
            colors: self.classes.iter().map(|c| (c.color, c.id)).collect(),
        }
    }

    /// Stable textual form used for content hashing.
    pub fn canonical_string(&self) -> String {
        let mut s = String::new();
        for c in &self.classes {
            s.push_str(&format!(
                "{}\t{}\t{}\t{}\t{},{},{}\n",
                c.id, c.name, c.short, c.evaluable, c.color[0], c.color[1], c.color[2]
            ));
        }
        s
    }
}

/// Association from source-dataset ids to canonical ids (`None` = void).
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DatasetMapping {
    pub dataset_name: String,
    pub entries: BTreeMap<u8, Option<u8>>,
    /// Canonical classes the source dataset actually contains.
    pub declared_present: BTreeSet<u8>,
}

impl DatasetMapping {
    pub fn identity(taxonomy: &ClassTaxonomy) -> Self {
        let entries = taxonomy.ids().map(|i| (i, Some(i))).collect();
        Self {
            dataset_name: "identity".to_string(),
            entries,
            declared_present: taxonomy.ids().collect(),
        }
    }

    /// Parses the line-oriented mapping format:
    ///
    /// ```text
    /// # comment
    /// dataset: gta5
    /// present: road, sidewalk, car
    /// 7 -> road
    /// 0 -> void
    /// ```
    ///
    /// Targets may be class names, numeric canonical ids or `void`. When no
    /// `present:` header is given the declared set is the image of the entries.
    pub fn parse(text: &str, taxonomy: &ClassTaxonomy) -> Result<Self, TaxonomyError> {
        let mut dataset_name = String::from("unnamed");
        let mut entries = BTreeMap::new();
        let mut present: Option<BTreeSet<u8>> = None;

        for (n, raw) in text.lines().enumerate() {
            let line_no = n + 1;
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("dataset:") {
                dataset_name = rest.trim().to_string();
                continue;
            }
            if let Some(rest) = line.strip_prefix("present:") {
                let mut set = BTreeSet::new();
                for name in rest.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                    set.insert(resolve_target(name, taxonomy, line_no)?.ok_or_else(|| {
                        TaxonomyError::Parse {
                            line: line_no,
                            message: "void cannot be declared present".to_string(),
                        }
                    })?);
                }
                present = Some(set);
                continue;
            }
            let (src, dst) = line.split_once("->").ok_or_else(|| TaxonomyError::Parse {
                line: line_no,
                message: format!("expected `<id> -> <class>`, got {line:?}"),
            })?;
            let src: u8 = src.trim().parse().map_err(|_| TaxonomyError::Parse {
                line: line_no,
                message: format!("source id {:?} is not in 0..=255", src.trim()),
            })?;
            let target = resolve_target(dst.trim(), taxonomy, line_no)?;
            if entries.insert(src, target).is_some() {
                return Err(TaxonomyError::Parse {
                    line: line_no,
                    message: format!("source id {src} mapped twice"),
                });
            }
        }

        let declared_present =
            present.unwrap_or_else(|| entries.values().filter_map(|t| *t).collect());
        Ok(Self {
            dataset_name,
            entries,
            declared_present,
        })
    }

    /// `self ∘ inner`: first apply `inner`, then `self`.
    pub fn compose(&self, inner: &DatasetMapping) -> DatasetMapping {
        let entries = inner
            .entries
            .iter()
            .filter_map(|(&src, &mid)| match mid {
                None => Some((src, None)),
                Some(m) => self.entries.get(&m).map(|&t| (src, t)),
            })
            .collect::<BTreeMap<_, _>>();
        DatasetMapping {
            dataset_name: format!("{}∘{}", self.dataset_name, inner.dataset_name),
            declared_present: entries.values().filter_map(|t| *t).collect(),
            entries,
        }
    }

    pub fn to_text(&self, taxonomy: &ClassTaxonomy) -> String {
        let mut s = format!("dataset: {}\n", self.dataset_name);
        let present: Vec<String> = self
            .declared_present
            .iter()
            .filter_map(|&id| taxonomy.class(id).map(|c| c.name.clone()))
            .collect();
        s.push_str(&format!("present: {}\n", present.join(", ")));
        for (src, dst) in &self.entries {
            let name = match dst {
                Some(id) => taxonomy
                    .class(*id)
                    .map(|c| c.name.clone())
                    .unwrap_or_else(|| id.to_string()),
                None => "void".to_string(),
            };
            s.push_str(&format!("{src} -> {name}\n"));
        }
        s
    }
}

fn resolve_target(
    name: &str,
    taxonomy: &ClassTaxonomy,
    line: usize,
) -> Result<Option<u8>, TaxonomyError> {
    if name.eq_ignore_ascii_case("void") {
        return Ok(None);
    }
    if let Ok(id) = name.parse::<u32>() {
        if id == VOID_ID as u32 {
            return Ok(None);
        }
        if id as usize >= taxonomy.len() {
            return Err(TaxonomyError::TargetOutOfRange { line, id });
        }
        return Ok(Some(id as u8));
    }
    taxonomy
        .id_of(name)
        .map(Some)
        .ok_or_else(|| TaxonomyError::UnknownName {
            line,
            name: name.to_string(),
        })
}

/// Remaps every pixel of a source-dataset map into the canonical taxonomy.
///
/// Source void (255) stays void unless the mapping says otherwise. Ids without
/// an entry are an error in strict mode and become void otherwise.
pub fn harmonize(
    map: &SemanticMap,
    mapping: &DatasetMapping,
    strict: bool,
) -> Result<SemanticMap, TaxonomyError> {
    let mut table = [None::<u8>; 256];
    let mut known = [false; 256];
    for (&src, &dst) in &mapping.entries {
        table[src as usize] = dst;
        known[src as usize] = true;
    }
    if !known[VOID_ID as usize] {
        known[VOID_ID as usize] = true;
    }

    if strict {
        let hist = map.histogram();
        let unmapped: Vec<(u8, u64)> = (0..=255u8)
            .filter(|&id| hist[id as usize] > 0 && !known[id as usize])
            .map(|id| (id, hist[id as usize]))
            .collect();
        if !unmapped.is_empty() {
            return Err(TaxonomyError::Unmapped(unmapped));
        }
    }

    let out = map
        .as_slice()
        .iter()
        .map(|&v| table[v as usize].unwrap_or(VOID_ID))
        .collect();
    Ok(SemanticMap::new(map.width(), map.height(), out)?)
}

/// Non-void class ids occurring in `map`.
pub fn present_classes(map: &SemanticMap) -> BTreeSet<u8> {
    let hist = map.histogram();
    (0..VOID_ID)
        .filter(|&id| hist[id as usize] > 0)
        .collect()
}

/// Colour-to-class association for RGB-coded label images.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Palette {
    pub colors: BTreeMap<[u8; 3], u8>,
}

impl Palette {
    /// Parses lines of the form `R G B -> <class|void>` (commas also accepted
    /// between components).
    pub fn parse(text: &str, taxonomy: &ClassTaxonomy) -> Result<Self, TaxonomyError> {
        let mut colors = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line_no = n + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (rgb, dst) = line.split_once("->").ok_or_else(|| TaxonomyError::Parse {
                line: line_no,
                message: format!("expected `R G B -> <class>`, got {line:?}"),
            })?;
            let parts: Vec<&str> = rgb
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|s| !s.is_empty())
                .collect();
            if parts.len() != 3 {
                return Err(TaxonomyError::Parse {
                    line: line_no,
                    message: format!("expected three colour components, got {}", parts.len()),
                });
            }
            let mut color = [0u8; 3];
            for (slot, p) in color.iter_mut().zip(&parts) {
                *slot = p.parse().map_err(|_| TaxonomyError::Parse {
                    line: line_no,
                    message: format!("colour component {p:?} is not in 0..=255"),
                })?;
            }
            let target = resolve_target(dst.trim(), taxonomy, line_no)?.unwrap_or(VOID_ID);
            colors.insert(color, target);
        }
        Ok(Self { colors })
    }

    /// Converts packed RGB pixels to class ids.
    ///
    /// Colours missing from the palette are an error in strict mode and void
    /// otherwise.
    pub fn decode(
        &self,
        width: u32,
        height: u32,
        rgb: &[u8],
        strict: bool,
    ) -> Result<SemanticMap, TaxonomyError> {
        let mut unmapped: BTreeMap<[u8; 3], u64> = BTreeMap::new();
        let classes: Vec<u8> = rgb
            .chunks_exact(3)
            .map(|px| {
                let c = [px[0], px[1], px[2]];
                match self.colors.get(&c) {
                    Some(&id) => id,
                    None => {
                        *unmapped.entry(c).or_default() += 1;
                        VOID_ID
                    }
                }
            })
            .collect();
        if strict && !unmapped.is_empty() {
            return Err(TaxonomyError::UnmappedColors(unmapped.into_iter().collect()));
        }
        Ok(SemanticMap::new(width, height, classes)?)
    }
}
