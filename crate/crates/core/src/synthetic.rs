//! Synthetic pages with solid black boxes standing in for formulas.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{write_formula_csv, FormulaBox, PageKey};
use crate::error::{Error, Result};
use crate::geometry::Rect;
use crate::raster::PageImage;

/// Ground-truth file written by [`write_corpus`].
pub const FORMULA_FILE: &str = "formulas.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticParams {
    /// Inclusive page width range.
    pub page_width: (u32, u32),
    pub page_height: (u32, u32),
    pub formulas_per_page: (usize, usize),
    pub formula_width: (u32, u32),
    pub formula_height: (u32, u32),
    /// Smallest distance from a formula to the page border.
    pub edge_margin: u32,
    /// Smallest gap between two formulas, along at least one axis.
    pub min_separation: u32,
    pub pages_per_document: u32,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        SyntheticParams {
            page_width: (2400, 4000),
            page_height: (2400, 4000),
            formulas_per_page: (3, 10),
            formula_width: (60, 1200),
            formula_height: (40, 200),
            edge_margin: 150,
            min_separation: 200,
            pages_per_document: 5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticPage {
    pub key: PageKey,
    pub image: PageImage,
    /// Sorted top-to-bottom, left-to-right.
    pub formulas: Vec<Rect>,
}

fn separated(a: &Rect, b: &Rect, gap: u32) -> bool {
    a.right() + gap <= b.left()
        || b.right() + gap <= a.left()
        || a.bottom() + gap <= b.top()
        || b.bottom() + gap <= a.top()
}

/// One page. Formulas that cannot be placed after a bounded number of tries
/// are skipped, so a page may hold fewer than requested.
pub fn generate_page(params: &SyntheticParams, key: PageKey, seed: u64) -> Result<SyntheticPage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = rng.gen_range(params.page_width.0..=params.page_width.1);
    let h = rng.gen_range(params.page_height.0..=params.page_height.1);
    let m = params.edge_margin;
    if w <= 2 * m + params.formula_width.0 || h <= 2 * m + params.formula_height.0 {
        return Err(Error::Config("page too small for the edge margin".into()));
    }
    let n = rng.gen_range(params.formulas_per_page.0..=params.formulas_per_page.1);
    let mut formulas: Vec<Rect> = Vec::with_capacity(n);
    for _ in 0..n {
        for _ in 0..200 {
            let fw = rng.gen_range(params.formula_width.0..=params.formula_width.1.min(w - 2 * m));
            let fh =
                rng.gen_range(params.formula_height.0..=params.formula_height.1.min(h - 2 * m));
            let x = rng.gen_range(m..=w - m - fw);
            let y = rng.gen_range(m..=h - m - fh);
            let r = Rect::from_xywh(x, y, fw, fh)?;
            if formulas
                .iter()
                .all(|f| separated(f, &r, params.min_separation))
            {
                formulas.push(r);
                break;
            }
        }
    }
    formulas.sort_by_key(|r| (r.top(), r.left(), r.bottom(), r.right()));
    let mut image = PageImage::blank(w, h)?;
    for f in &formulas {
        image.fill_rect(f, 0);
    }
    Ok(SyntheticPage {
        key,
        image,
        formulas,
    })
}

/// `n` pages grouped into documents `synthNNN`.
pub fn generate_corpus(
    params: &SyntheticParams,
    n: usize,
    seed: u64,
) -> Result<Vec<SyntheticPage>> {
    let per_doc = params.pages_per_document.max(1);
    (0..n)
        .map(|i| {
            let key = PageKey::new(
                format!("synth{:03}", i as u32 / per_doc),
                i as u32 % per_doc + 1,
            );
            let page_seed = seed
                .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                .wrapping_add(i as u64);
            generate_page(params, key, page_seed)
        })
        .collect()
}

pub fn formula_boxes(pages: &[SyntheticPage]) -> BTreeMap<PageKey, Vec<FormulaBox>> {
    pages
        .iter()
        .map(|p| {
            let boxes = p
                .formulas
                .iter()
                .enumerate()
                .map(|(i, r)| FormulaBox {
                    formula_id: i.to_string(),
                    rect: *r,
                })
                .collect();
            (p.key.clone(), boxes)
        })
        .collect()
}

/// Writes `{doc_id}_{page}.png` per page and [`FORMULA_FILE`].
pub fn write_corpus(dir: &Path, pages: &[SyntheticPage]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for p in pages {
        p.image.save(&dir.join(format!("{}.png", p.key)))?;
    }
    let path = dir.join(FORMULA_FILE);
    let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
    write_formula_csv(BufWriter::new(file), &formula_boxes(pages))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pages_respect_constraints() {
        let params = SyntheticParams::default();
        let pages = generate_corpus(&params, 12, 3).unwrap();
        assert_eq!(pages[5].key, PageKey::new("synth001", 1));
        for p in &pages {
            let (w, h) = p.image.size();
            assert!(!p.formulas.is_empty());
            for (i, f) in p.formulas.iter().enumerate() {
                assert!(f.left() >= 150 && f.top() >= 150);
                assert!(f.right() + 150 <= w && f.bottom() + 150 <= h);
                for g in &p.formulas[i + 1..] {
                    assert!(separated(f, g, 200));
                }
                assert_eq!(p.image.image.get_pixel(f.left(), f.top())[0], 0);
            }
        }
    }

    #[test]
    fn deterministic() {
        let params = SyntheticParams::default();
        let a = generate_corpus(&params, 3, 9).unwrap();
        let b = generate_corpus(&params, 3, 9).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.formulas, y.formulas);
            assert_eq!(x.image, y.image);
        }
    }
}
