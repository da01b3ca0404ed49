//! Character-level ground truth ingest and formula-region derivation.
//!
//! Input rows follow
//! `doc_id,page,char_id,left,top,right,bottom,label,is_math,parent_id,relationship`.
//! Formula regions are the connected groups of math characters under the
//! undirected child/parent link graph.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{Read, Write};

use log::warn;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::geometry::{Rect, Transform};

/// Identifies one page of one document.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PageKey {
    pub doc_id: String,
    pub page: u32,
}

impl PageKey {
    pub fn new(doc_id: impl Into<String>, page: u32) -> Self {
        PageKey {
            doc_id: doc_id.into(),
            page,
        }
    }
}

impl fmt::Display for PageKey {
    /// Matches the page raster file stem `{doc_id}_{page}`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_{}", self.doc_id, self.page)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Relationship {
    Horizontal,
    Subscript,
    Superscript,
    Above,
    Below,
    Inside,
    None,
}

impl Relationship {
    /// Unrecognised labels map to `None`; the second value reports whether the
    /// label was recognised.
    pub fn parse(label: &str) -> (Relationship, bool) {
        let rel = match label.trim().to_ascii_lowercase().as_str() {
            "horizontal" | "hor" | "h" | "right" => Relationship::Horizontal,
            "subscript" | "sub" => Relationship::Subscript,
            "superscript" | "sup" => Relationship::Superscript,
            "above" | "upper" => Relationship::Above,
            "below" | "under" | "lower" => Relationship::Below,
            "inside" | "in" => Relationship::Inside,
            "" | "none" | "-" => Relationship::None,
            _ => return (Relationship::None, false),
        };
        (rel, true)
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Relationship::Horizontal => "horizontal",
            Relationship::Subscript => "subscript",
            Relationship::Superscript => "superscript",
            Relationship::Above => "above",
            Relationship::Below => "below",
            Relationship::Inside => "inside",
            Relationship::None => "none",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CharacterRecord {
    pub char_id: String,
    pub bbox: Rect,
    pub label: String,
    pub is_math: bool,
    pub parent_id: Option<String>,
    pub relationship: Relationship,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FormulaRegion {
    pub formula_id: String,
    pub bbox: Rect,
    pub member_char_ids: Vec<String>,
}

impl FormulaRegion {
    pub fn is_single_symbol(&self) -> bool {
        self.member_char_ids.len() == 1
    }
}

/// A formula region without its member list, as stored in formula CSVs.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FormulaBox {
    pub formula_id: String,
    pub rect: Rect,
}

impl From<&FormulaRegion> for FormulaBox {
    fn from(f: &FormulaRegion) -> Self {
        FormulaBox {
            formula_id: f.formula_id.clone(),
            rect: f.bbox,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthPage {
    pub key: PageKey,
    /// `(width, height)` in pixels; unknown until a raster is attached.
    pub page_size: Option<(u32, u32)>,
    pub characters: Vec<CharacterRecord>,
    pub formulas: Vec<FormulaRegion>,
}

impl GroundTruthPage {
    pub fn new(key: PageKey) -> Self {
        GroundTruthPage {
            key,
            page_size: None,
            characters: Vec::new(),
            formulas: Vec::new(),
        }
    }

    /// Attaches the raster size, checking that every box fits.
    pub fn set_page_size(&mut self, width: u32, height: u32) -> Result<()> {
        let bounds = Rect::new(0, 0, width, height)?;
        let outside = self
            .characters
            .iter()
            .map(|c| c.bbox)
            .chain(self.formulas.iter().map(|f| f.bbox))
            .find(|r| !bounds.contains_rect(r));
        if let Some(r) = outside {
            return Err(Error::Data(format!(
                "page {}: box {r} outside page {width}x{height}",
                self.key
            )));
        }
        self.page_size = Some((width, height));
        Ok(())
    }

    pub fn formula_boxes(&self) -> Vec<FormulaBox> {
        self.formulas.iter().map(FormulaBox::from).collect()
    }
}

/// Whether right/bottom coordinates in the source are inclusive or exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CoordConvention {
    #[default]
    HalfOpen,
    Inclusive,
}

#[derive(Debug, Deserialize)]
struct RawCharRow {
    doc_id: String,
    page: String,
    char_id: String,
    left: String,
    top: String,
    right: String,
    bottom: String,
    label: String,
    is_math: String,
    parent_id: String,
    relationship: String,
}

pub(crate) fn parse_int(field: &str, name: &str, row: u64, ctx: &str) -> Result<i64> {
    let t = field.trim();
    t.parse::<i64>()
        .or_else(|_| {
            // tolerate integral floats such as "120.0"
            t.parse::<f64>()
                .ok()
                .filter(|v| v.fract() == 0.0 && v.is_finite())
                .map(|v| v as i64)
                .ok_or(())
        })
        .map_err(|_| Error::row(ctx, row, format!("{name}: not an integer: {field:?}")))
}

fn parse_bool(field: &str, row: u64, ctx: &str) -> Result<bool> {
    match field.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "t" | "yes" | "y" => Ok(true),
        "0" | "false" | "f" | "no" | "n" => Ok(false),
        other => Err(Error::row(
            ctx,
            row,
            format!("is_math: not a boolean: {other:?}"),
        )),
    }
}

/// Parses character-level ground truth, groups rows into pages and derives
/// formula regions. Pages come back sorted by `(doc_id, page)`.
pub fn parse_gtdb<R: Read>(reader: R, convention: CoordConvention) -> Result<Vec<GroundTruthPage>> {
    const CTX: &str = "ground-truth csv";
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut pages: BTreeMap<PageKey, GroundTruthPage> = BTreeMap::new();
    let mut unknown_relationships = 0usize;

    for (i, rec) in rdr.deserialize::<RawCharRow>().enumerate() {
        // header is line 1
        let row = i as u64 + 2;
        let raw = rec.map_err(|e| Error::row(CTX, row, e.to_string()))?;
        let page_no = parse_int(&raw.page, "page", row, CTX)?;
        let page_no = u32::try_from(page_no)
            .map_err(|_| Error::row(CTX, row, format!("page: out of range: {page_no}")))?;
        let l = parse_int(&raw.left, "left", row, CTX)?;
        let t = parse_int(&raw.top, "top", row, CTX)?;
        let mut r = parse_int(&raw.right, "right", row, CTX)?;
        let mut b = parse_int(&raw.bottom, "bottom", row, CTX)?;
        if convention == CoordConvention::Inclusive {
            r += 1;
            b += 1;
        }
        let bbox = Rect::from_i64(l, t, r, b).map_err(|e| Error::row(CTX, row, e.to_string()))?;
        if raw.char_id.is_empty() {
            return Err(Error::row(CTX, row, "char_id: empty"));
        }
        let parent_id = Some(raw.parent_id).filter(|p| !p.is_empty() && p != "-1" && p != "NA");
        if parent_id.as_deref() == Some(raw.char_id.as_str()) {
            return Err(Error::row(CTX, row, "parent_id equals char_id"));
        }
        let (relationship, known) = Relationship::parse(&raw.relationship);
        if !known {
            unknown_relationships += 1;
            warn!(
                "{CTX}: row {row}: unrecognised relationship {:?} mapped to none",
                raw.relationship
            );
        }
        let key = PageKey::new(raw.doc_id, page_no);
        pages
            .entry(key.clone())
            .or_insert_with(|| GroundTruthPage::new(key))
            .characters
            .push(CharacterRecord {
                char_id: raw.char_id,
                bbox,
                label: raw.label,
                is_math: parse_bool(&raw.is_math, row, CTX)?,
                parent_id,
                relationship,
            });
    }
    if unknown_relationships > 0 {
        warn!("{CTX}: {unknown_relationships} rows had unrecognised relationships");
    }

    let mut out = Vec::with_capacity(pages.len());
    for (_, mut page) in pages {
        let mut ids = BTreeSet::new();
        for c in &page.characters {
            if !ids.insert(c.char_id.as_str()) {
                return Err(Error::Data(format!(
                    "page {}: duplicate char_id {:?}",
                    page.key, c.char_id
                )));
            }
        }
        if let Some(c) = page
            .characters
            .iter()
            .find(|c| c.parent_id.as_deref().is_some_and(|p| !ids.contains(p)))
        {
            return Err(Error::DanglingParent {
                doc_id: page.key.doc_id.clone(),
                page: page.key.page,
                char_id: c.char_id.clone(),
                parent_id: c.parent_id.clone().unwrap_or_default(),
            });
        }
        page.formulas = formulas_from_characters(&page);
        out.push(page);
    }
    Ok(out)
}

/// Groups math characters into formulas: connected components of the
/// child/parent graph restricted to math characters. Output is sorted by
/// position and independent of character order.
pub fn formulas_from_characters(page: &GroundTruthPage) -> Vec<FormulaRegion> {
    let math: Vec<&CharacterRecord> = page.characters.iter().filter(|c| c.is_math).collect();
    let index: HashMap<&str, usize> = math
        .iter()
        .enumerate()
        .map(|(i, c)| (c.char_id.as_str(), i))
        .collect();
    let mut parent: Vec<usize> = (0..math.len()).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for (i, c) in math.iter().enumerate() {
        if let Some(&j) = c.parent_id.as_deref().and_then(|p| index.get(p)) {
            let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
            if ri != rj {
                parent[ri.max(rj)] = ri.min(rj);
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..math.len() {
        let root = find(&mut parent, i);
        groups.entry(root).or_default().push(i);
    }
    let mut regions: Vec<(Rect, Vec<String>)> = groups
        .into_values()
        .map(|members| {
            let bbox = Rect::union_all(members.iter().map(|&m| &math[m].bbox))
                .expect("groups are non-empty");
            let mut ids: Vec<String> = members.iter().map(|&m| math[m].char_id.clone()).collect();
            ids.sort();
            (bbox, ids)
        })
        .collect();
    regions.sort_by(|a, b| {
        (a.0.top(), a.0.left(), a.0.bottom(), a.0.right(), &a.1).cmp(&(
            b.0.top(),
            b.0.left(),
            b.0.bottom(),
            b.0.right(),
            &b.1,
        ))
    });
    regions
        .into_iter()
        .enumerate()
        .map(|(i, (bbox, member_char_ids))| FormulaRegion {
            formula_id: i.to_string(),
            bbox,
            member_char_ids,
        })
        .collect()
}

/// Applies `t` to every box on the page and rescales the page size.
pub fn adjust_ground_truth(page: &GroundTruthPage, t: &Transform) -> Result<GroundTruthPage> {
    let page_size = match page.page_size {
        Some((w, h)) => {
            let w = (t.scale_x() * num_rational::Ratio::from_integer(w as i64))
                .ceil()
                .to_integer();
            let h = (t.scale_y() * num_rational::Ratio::from_integer(h as i64))
                .ceil()
                .to_integer();
            Some((w as u32, h as u32))
        }
        None => None,
    };
    let bounds = page_size.map(|(w, h)| Rect::new(0, 0, w, h)).transpose()?;
    let map = |r: &Rect| -> Result<Rect> {
        let out = t.apply(r)?;
        if let Some(b) = bounds {
            if !b.contains_rect(&out) {
                return Err(Error::Data(format!(
                    "page {}: adjusted box {out} outside page bounds {b}",
                    page.key
                )));
            }
        }
        Ok(out)
    };
    let characters = page
        .characters
        .iter()
        .map(|c| {
            Ok(CharacterRecord {
                bbox: map(&c.bbox)?,
                ..c.clone()
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let formulas = page
        .formulas
        .iter()
        .map(|f| {
            Ok(FormulaRegion {
                bbox: map(&f.bbox)?,
                ..f.clone()
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GroundTruthPage {
        key: page.key.clone(),
        page_size,
        characters,
        formulas,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CollectionStats {
    pub docs: usize,
    pub pages: usize,
    pub single_symbol_formulas: usize,
    pub multi_symbol_formulas: usize,
    pub total: usize,
}

pub fn collection_stats(pages: &[GroundTruthPage]) -> CollectionStats {
    let docs: BTreeSet<&str> = pages.iter().map(|p| p.key.doc_id.as_str()).collect();
    let single = pages
        .iter()
        .flat_map(|p| &p.formulas)
        .filter(|f| f.is_single_symbol())
        .count();
    let total: usize = pages.iter().map(|p| p.formulas.len()).sum();
    CollectionStats {
        docs: docs.len(),
        pages: pages.len(),
        single_symbol_formulas: single,
        multi_symbol_formulas: total - single,
        total,
    }
}

/// Writes `doc_id,page,formula_id,left,top,right,bottom`.
pub fn write_formula_csv<W: Write>(
    writer: W,
    pages: &BTreeMap<PageKey, Vec<FormulaBox>>,
) -> Result<()> {
    const CTX: &str = "formula csv";
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "doc_id",
        "page",
        "formula_id",
        "left",
        "top",
        "right",
        "bottom",
    ])
    .map_err(|e| Error::csv(CTX, e))?;
    for (key, formulas) in pages {
        for f in formulas {
            w.write_record([
                key.doc_id.clone(),
                key.page.to_string(),
                f.formula_id.clone(),
                f.rect.left().to_string(),
                f.rect.top().to_string(),
                f.rect.right().to_string(),
                f.rect.bottom().to_string(),
            ])
            .map_err(|e| Error::csv(CTX, e))?;
        }
    }
    w.flush().map_err(|e| Error::io("formula csv", e))?;
    Ok(())
}

pub fn formula_map(pages: &[GroundTruthPage]) -> BTreeMap<PageKey, Vec<FormulaBox>> {
    pages
        .iter()
        .map(|p| (p.key.clone(), p.formula_boxes()))
        .collect()
}

#[derive(Debug, Deserialize)]
struct RawFormulaRow {
    doc_id: String,
    page: String,
    formula_id: String,
    left: String,
    top: String,
    right: String,
    bottom: String,
}

pub fn read_formula_csv<R: Read>(reader: R) -> Result<BTreeMap<PageKey, Vec<FormulaBox>>> {
    const CTX: &str = "formula csv";
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut out: BTreeMap<PageKey, Vec<FormulaBox>> = BTreeMap::new();
    for (i, rec) in rdr.deserialize::<RawFormulaRow>().enumerate() {
        let row = i as u64 + 2;
        let raw = rec.map_err(|e| Error::row(CTX, row, e.to_string()))?;
        let page = parse_int(&raw.page, "page", row, CTX)?;
        let page = u32::try_from(page).map_err(|_| Error::row(CTX, row, "page: out of range"))?;
        let rect = Rect::from_i64(
            parse_int(&raw.left, "left", row, CTX)?,
            parse_int(&raw.top, "top", row, CTX)?,
            parse_int(&raw.right, "right", row, CTX)?,
            parse_int(&raw.bottom, "bottom", row, CTX)?,
        )
        .map_err(|e| Error::row(CTX, row, e.to_string()))?;
        out.entry(PageKey::new(raw.doc_id, page))
            .or_default()
            .push(FormulaBox {
                formula_id: raw.formula_id,
                rect,
            });
    }
    Ok(out)
}
