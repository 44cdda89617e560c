//! Gesture and action vocabularies, the kind x part validity matrix and the
//! token codecs shared by the classifier and the translator.

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame::{layout, CANVAS_COLS, CANVAS_ROWS};

pub const SCHEMA_VERSION: u32 = 1;

pub const KIND_COUNT: usize = 13;
pub const PART_COUNT: usize = 11;
pub const CLASS_COUNT: usize = 81;
pub const ACTION_COUNT: usize = 44;
pub const PERFORMABLE_COUNT: usize = 32;
pub const TRANSLATION_COUNT: usize = 40;

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const SPECIAL_TOKENS: [&str; 3] = ["<pad>", "<bos>", "<eos>"];

/// The shipped default taxonomy document.
pub const DEFAULT_TAXONOMY: &str = include_str!("../config/taxonomy.toml");

#[derive(Debug, Error, PartialEq)]
pub enum TaxonomyError {
    #[error("taxonomy document does not parse: {0}")]
    Parse(String),
    #[error("unsupported schema_version {0}")]
    SchemaVersion(u32),
    #[error("expected {expected} {what}, found {actual}")]
    Count {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("duplicate {what} name {name:?}")]
    Duplicate { what: &'static str, name: String },
    #[error("kind {kind:?} lists unknown part {part:?}")]
    UnknownPart { kind: String, part: String },
    #[error("kind {0:?} does not take a part but lists parts")]
    PartlessWithParts(String),
    #[error("part {part:?}: {reason}")]
    Region { part: String, reason: String },
    #[error("regions of {0:?} and {1:?} overlap")]
    Overlap(String, String),
    #[error("fallback action {0:?}: {1}")]
    Fallback(String, &'static str),
    #[error("unknown token {0:?}")]
    UnknownToken(String),
    #[error("token id {id} out of range for vocabulary of {len}")]
    IdOutOfRange { id: usize, len: usize },
    #[error("({kind}, {part}) is not an admitted gesture class")]
    Inadmissible { kind: String, part: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct KindId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PartId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ClassId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ActionId(pub usize);

/// Canvas rectangle, rows `row..row + height`, cols `col..col + width`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Region {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
}

impl Region {
    pub fn contains(&self, row: usize, col: usize) -> bool {
        row >= self.row && row < self.row + self.height && col >= self.col && col < self.col + self.width
    }

    pub fn overlaps(&self, other: &Region) -> bool {
        self.row < other.row + other.height
            && other.row < self.row + self.height
            && self.col < other.col + other.width
            && other.col < self.col + self.width
    }

    pub fn area(&self) -> usize {
        self.height * self.width
    }

    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (self.row..self.row + self.height).flat_map(move |r| (self.col..self.col + self.width).map(move |c| (r, c)))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GestureKind {
    pub name: String,
    pub requires_part: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BodyPart {
    pub name: String,
    pub region: Region,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GestureClass {
    pub id: ClassId,
    pub kind: KindId,
    pub part: Option<PartId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionCategory {
    WholeBody,
    Forelimbs,
    Hindlimbs,
    Head,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionWord {
    pub name: String,
    pub category: ActionCategory,
    pub performable: bool,
    pub in_translation_vocab: bool,
}

/// Token list with PAD/BOS/EOS fixed at ids 0, 1, 2.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new<S: Into<String>>(content: impl IntoIterator<Item = S>) -> Result<Self, TaxonomyError> {
        let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        tokens.extend(content.into_iter().map(Into::into));
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(TaxonomyError::Duplicate {
                    what: "vocabulary token",
                    name: t.clone(),
                });
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn encode(&self, token: &str) -> Result<usize, TaxonomyError> {
        self.index
            .get(token)
            .copied()
            .ok_or_else(|| TaxonomyError::UnknownToken(token.to_string()))
    }

    pub fn decode(&self, id: usize) -> Result<&str, TaxonomyError> {
        self.tokens
            .get(id)
            .map(String::as_str)
            .ok_or(TaxonomyError::IdOutOfRange {
                id,
                len: self.tokens.len(),
            })
    }

    /// Size including the three specials.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() == SPECIAL_TOKENS.len()
    }

    pub fn content_tokens(&self) -> &[String] {
        &self.tokens[SPECIAL_TOKENS.len()..]
    }

    pub fn is_special(id: usize) -> bool {
        id < SPECIAL_TOKENS.len()
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTaxonomy {
    schema_version: u32,
    fallback_action: String,
    parts: Vec<RawPart>,
    kinds: Vec<RawKind>,
    actions: Vec<RawAction>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPart {
    name: String,
    region: Region,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawKind {
    name: String,
    #[serde(default = "yes")]
    requires_part: bool,
    #[serde(default)]
    parts: Vec<String>,
}

fn yes() -> bool {
    true
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAction {
    name: String,
    category: ActionCategory,
    performable: bool,
    translation: bool,
}

/// Part geometry as served to clients, with a checksum over the canonical
/// JSON encoding of `parts`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneGeometry {
    pub canvas_rows: usize,
    pub canvas_cols: usize,
    pub parts: Vec<Zone>,
    pub checksum: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Zone {
    pub name: String,
    pub region: Region,
}

impl ZoneGeometry {
    pub fn checksum_of(parts: &[Zone]) -> u32 {
        crc32fast::hash(serde_json::to_string(parts).expect("zones serialize").as_bytes())
    }
}

/// A validated taxonomy. Immutable once loaded.
#[derive(Debug, Clone)]
pub struct Taxonomy {
    kinds: Vec<GestureKind>,
    parts: Vec<BodyPart>,
    classes: Vec<GestureClass>,
    class_index: HashMap<(KindId, Option<PartId>), ClassId>,
    actions: Vec<ActionWord>,
    gesture_vocab: Vocabulary,
    action_vocab: Vocabulary,
    fallback: ActionId,
}

fn check_unique<'a>(what: &'static str, names: impl Iterator<Item = &'a str>) -> Result<(), TaxonomyError> {
    let mut seen = HashSet::new();
    for n in names {
        if !seen.insert(n) {
            return Err(TaxonomyError::Duplicate {
                what,
                name: n.to_string(),
            });
        }
    }
    Ok(())
}

fn check_count(what: &'static str, expected: usize, actual: usize) -> Result<(), TaxonomyError> {
    if expected == actual {
        Ok(())
    } else {
        Err(TaxonomyError::Count { what, expected, actual })
    }
}

impl Taxonomy {
    pub fn load_default() -> Self {
        Self::from_toml(DEFAULT_TAXONOMY).expect("shipped taxonomy is valid")
    }

    pub fn from_toml(text: &str) -> Result<Self, TaxonomyError> {
        let raw: RawTaxonomy = toml::from_str(text).map_err(|e| TaxonomyError::Parse(e.to_string()))?;
        if raw.schema_version != SCHEMA_VERSION {
            return Err(TaxonomyError::SchemaVersion(raw.schema_version));
        }
        check_unique("part", raw.parts.iter().map(|p| p.name.as_str()))?;
        check_unique("kind", raw.kinds.iter().map(|k| k.name.as_str()))?;
        check_unique("action", raw.actions.iter().map(|a| a.name.as_str()))?;
        check_count("gesture kinds", KIND_COUNT, raw.kinds.len())?;
        check_count("body parts", PART_COUNT, raw.parts.len())?;
        check_count(
            "partless kinds",
            1,
            raw.kinds.iter().filter(|k| !k.requires_part).count(),
        )?;

        let parts: Vec<BodyPart> = raw
            .parts
            .into_iter()
            .map(|p| BodyPart {
                name: p.name,
                region: p.region,
            })
            .collect();
        for p in &parts {
            validate_region(p)?;
        }
        for (i, a) in parts.iter().enumerate() {
            for b in &parts[i + 1..] {
                if a.region.overlaps(&b.region) {
                    return Err(TaxonomyError::Overlap(a.name.clone(), b.name.clone()));
                }
            }
        }
        let part_ids: HashMap<&str, PartId> = parts
            .iter()
            .enumerate()
            .map(|(i, p)| (p.name.as_str(), PartId(i)))
            .collect();

        let mut kinds = Vec::with_capacity(raw.kinds.len());
        let mut classes = Vec::new();
        for (ki, k) in raw.kinds.iter().enumerate() {
            let kind = KindId(ki);
            if !k.requires_part {
                if !k.parts.is_empty() {
                    return Err(TaxonomyError::PartlessWithParts(k.name.clone()));
                }
                classes.push((kind, None));
            }
            check_unique("part in validity row", k.parts.iter().map(String::as_str))?;
            let mut row: Vec<PartId> = Vec::with_capacity(k.parts.len());
            for name in &k.parts {
                let id = part_ids.get(name.as_str()).ok_or_else(|| TaxonomyError::UnknownPart {
                    kind: k.name.clone(),
                    part: name.clone(),
                })?;
                row.push(*id);
            }
            row.sort();
            classes.extend(row.into_iter().map(|p| (kind, Some(p))));
            kinds.push(GestureKind {
                name: k.name.clone(),
                requires_part: k.requires_part,
            });
        }
        check_count("gesture classes", CLASS_COUNT, classes.len())?;
        let classes: Vec<GestureClass> = classes
            .into_iter()
            .enumerate()
            .map(|(i, (kind, part))| GestureClass {
                id: ClassId(i),
                kind,
                part,
            })
            .collect();
        let class_index = classes.iter().map(|c| ((c.kind, c.part), c.id)).collect();

        let actions: Vec<ActionWord> = raw
            .actions
            .into_iter()
            .map(|a| ActionWord {
                name: a.name,
                category: a.category,
                performable: a.performable,
                in_translation_vocab: a.translation,
            })
            .collect();
        check_count("actions", ACTION_COUNT, actions.len())?;
        check_count(
            "performable actions",
            PERFORMABLE_COUNT,
            actions.iter().filter(|a| a.performable).count(),
        )?;
        check_count(
            "translation actions",
            TRANSLATION_COUNT,
            actions.iter().filter(|a| a.in_translation_vocab).count(),
        )?;
        let fallback = actions
            .iter()
            .position(|a| a.name == raw.fallback_action)
            .ok_or(TaxonomyError::Fallback(raw.fallback_action.clone(), "not an action"))?;
        if !actions[fallback].performable || !actions[fallback].in_translation_vocab {
            return Err(TaxonomyError::Fallback(
                raw.fallback_action,
                "must be performable and in the translation vocabulary",
            ));
        }

        let mut tax = Self {
            kinds,
            parts,
            classes,
            class_index,
            actions,
            gesture_vocab: Vocabulary::new(Vec::<String>::new())?,
            action_vocab: Vocabulary::new(Vec::<String>::new())?,
            fallback: ActionId(fallback),
        };
        let class_tokens: Vec<String> = tax.classes.iter().map(|c| tax.class_token(c.id)).collect();
        tax.gesture_vocab = Vocabulary::new(class_tokens)?;
        tax.action_vocab = Vocabulary::new(
            tax.actions
                .iter()
                .filter(|a| a.in_translation_vocab)
                .map(|a| a.name.clone())
                .collect::<Vec<_>>(),
        )?;
        Ok(tax)
    }

    pub fn kinds(&self) -> &[GestureKind] {
        &self.kinds
    }

    pub fn parts(&self) -> &[BodyPart] {
        &self.parts
    }

    pub fn classes(&self) -> &[GestureClass] {
        &self.classes
    }

    pub fn actions(&self) -> &[ActionWord] {
        &self.actions
    }

    pub fn kind(&self, id: KindId) -> &GestureKind {
        &self.kinds[id.0]
    }

    pub fn part(&self, id: PartId) -> &BodyPart {
        &self.parts[id.0]
    }

    pub fn action(&self, id: ActionId) -> &ActionWord {
        &self.actions[id.0]
    }

    pub fn kind_by_name(&self, name: &str) -> Option<KindId> {
        self.kinds.iter().position(|k| k.name == name).map(KindId)
    }

    pub fn part_by_name(&self, name: &str) -> Option<PartId> {
        self.parts.iter().position(|p| p.name == name).map(PartId)
    }

    pub fn action_by_name(&self, name: &str) -> Option<ActionId> {
        self.actions.iter().position(|a| a.name == name).map(ActionId)
    }

    pub fn gesture_class_of(&self, kind: KindId, part: Option<PartId>) -> Result<&GestureClass, TaxonomyError> {
        self.class_index
            .get(&(kind, part))
            .map(|id| &self.classes[id.0])
            .ok_or_else(|| TaxonomyError::Inadmissible {
                kind: self.kinds.get(kind.0).map_or("?".into(), |k| k.name.clone()),
                part: part.map_or("no part".into(), |p| {
                    self.parts.get(p.0).map_or("?".into(), |p| p.name.clone())
                }),
            })
    }

    pub fn class(&self, id: ClassId) -> Option<&GestureClass> {
        self.classes.get(id.0)
    }

    pub fn none_class(&self) -> ClassId {
        self.classes.iter().find(|c| c.part.is_none()).expect("validated").id
    }

    /// `kind_part`, or the bare kind name for the partless class.
    pub fn class_token(&self, id: ClassId) -> String {
        let c = &self.classes[id.0];
        match c.part {
            Some(p) => format!("{}_{}", self.kinds[c.kind.0].name, self.parts[p.0].name),
            None => self.kinds[c.kind.0].name.clone(),
        }
    }

    pub fn class_by_token(&self, token: &str) -> Result<ClassId, TaxonomyError> {
        let id = self.gesture_vocab.encode(token)?;
        if Vocabulary::is_special(id) {
            return Err(TaxonomyError::UnknownToken(token.to_string()));
        }
        Ok(ClassId(id - SPECIAL_TOKENS.len()))
    }

    pub fn gesture_vocab(&self) -> &Vocabulary {
        &self.gesture_vocab
    }

    pub fn action_vocab(&self) -> &Vocabulary {
        &self.action_vocab
    }

    /// Gesture-vocabulary token id of a class.
    pub fn class_token_id(&self, id: ClassId) -> usize {
        id.0 + SPECIAL_TOKENS.len()
    }

    /// Action-vocabulary token id of an action, if it is in the vocabulary.
    pub fn action_token_id(&self, id: ActionId) -> Option<usize> {
        self.action_vocab.encode(&self.actions[id.0].name).ok()
    }

    pub fn action_of_token(&self, token_id: usize) -> Option<ActionId> {
        if Vocabulary::is_special(token_id) {
            return None;
        }
        let name = self.action_vocab.decode(token_id).ok()?;
        self.action_by_name(name)
    }

    /// CRC-32 over both vocabularies; ties model checkpoints to a taxonomy.
    pub fn vocabulary_fingerprint(&self) -> u32 {
        let mut h = crc32fast::Hasher::new();
        for vocab in [&self.gesture_vocab, &self.action_vocab] {
            for t in vocab.content_tokens() {
                h.update(t.as_bytes());
                h.update(b"\n");
            }
            h.update(b"\n");
        }
        h.finalize()
    }

    pub fn fallback_action(&self) -> ActionId {
        self.fallback
    }

    pub fn zone_geometry(&self) -> ZoneGeometry {
        let parts: Vec<Zone> = self
            .parts
            .iter()
            .map(|p| Zone {
                name: p.name.clone(),
                region: p.region,
            })
            .collect();
        ZoneGeometry {
            canvas_rows: CANVAS_ROWS,
            canvas_cols: CANVAS_COLS,
            checksum: ZoneGeometry::checksum_of(&parts),
            parts,
        }
    }
}

fn validate_region(p: &BodyPart) -> Result<(), TaxonomyError> {
    let r = p.region;
    let fail = |reason: String| TaxonomyError::Region {
        part: p.name.clone(),
        reason,
    };
    if r.area() == 0 {
        return Err(fail("empty region".into()));
    }
    if r.row + r.height > CANVAS_ROWS || r.col + r.width > CANVAS_COLS {
        return Err(fail(format!("extends past the {CANVAS_ROWS}x{CANVAS_COLS} canvas")));
    }
    if let Some((row, col)) = r.pixels().find(|&(row, col)| layout::sensor_at(row, col).is_none()) {
        return Err(fail(format!("pixel ({row}, {col}) has no sensor")));
    }
    Ok(())
}

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "class {}", self.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_counts() {
        let t = Taxonomy::load_default();
        assert_eq!(t.kinds().len(), 13);
        assert_eq!(t.parts().len(), 11);
        assert_eq!(t.classes().len(), 81);
        assert_eq!(t.actions().len(), 44);
        assert_eq!(t.actions().iter().filter(|a| a.performable).count(), 32);
        assert_eq!(t.action_vocab().content_tokens().len(), 40);
        assert_eq!(t.gesture_vocab().len(), 84);
    }

    #[test]
    fn none_is_class_zero_without_part() {
        let t = Taxonomy::load_default();
        let none = t.kind_by_name("none").unwrap();
        let c = t.gesture_class_of(none, None).unwrap();
        assert_eq!(c.id, ClassId(0));
        assert_eq!(t.none_class(), ClassId(0));
        assert_eq!(t.class_token(c.id), "none");
        let head = t.part_by_name("head").unwrap();
        assert!(matches!(
            t.gesture_class_of(none, Some(head)),
            Err(TaxonomyError::Inadmissible { .. })
        ));
    }

    #[test]
    fn stroke_head_round_trip() {
        let t = Taxonomy::load_default();
        let (k, p) = (t.kind_by_name("stroke").unwrap(), t.part_by_name("head").unwrap());
        let c = *t.gesture_class_of(k, Some(p)).unwrap();
        let back = t.class(c.id).unwrap();
        assert_eq!((back.kind, back.part), (k, Some(p)));
        assert_eq!(t.class_by_token("stroke_head").unwrap(), c.id);
    }

    #[test]
    fn specials_are_fixed() {
        let t = Taxonomy::load_default();
        for v in [t.gesture_vocab(), t.action_vocab()] {
            assert_eq!(v.encode("<pad>").unwrap(), PAD);
            assert_eq!(v.encode("<bos>").unwrap(), BOS);
            assert_eq!(v.encode("<eos>").unwrap(), EOS);
            let past = v.content_tokens().len() + 3;
            assert_eq!(v.decode(past), Err(TaxonomyError::IdOutOfRange { id: past, len: past }));
        }
        assert!(Vocabulary::new(["a", "<bos>"]).is_err());
    }

    #[test]
    fn fallback_is_idle() {
        let t = Taxonomy::load_default();
        assert_eq!(t.action(t.fallback_action()).name, "idle");
        assert!(t.action_token_id(t.fallback_action()).is_some());
    }

    #[test]
    fn zone_checksum_matches_parts() {
        let z = Taxonomy::load_default().zone_geometry();
        assert_eq!(z.parts.len(), 11);
        assert_eq!(z.checksum, ZoneGeometry::checksum_of(&z.parts));
    }
}
