//! Matching census labels to LiDAR clouds.
//!
//! Census stems are recorded as east/north offsets from a surveyed corner
//! post. Once both datasets share a planar frame, each location is snapped
//! to an integer grid cell (round half away from zero) and a label is
//! assigned only where a cell holds exactly one cloud and exactly one stem.
//! Crowded cells are dropped rather than guessed.

use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};
use crate::pointcloud::PointCloud;

pub const OTHER_CLASS: &str = "other";

#[derive(Debug, Clone, PartialEq)]
pub struct CensusRecord {
    pub tag: String,
    pub species: String,
    /// Meters due east of the corner post.
    pub east_offset: f64,
    /// Meters due north of the corner post.
    pub north_offset: f64,
    /// Diameter at breast height, centimeters.
    pub dbh: Option<f64>,
    pub alive: bool,
}

/// Position of the plot's corner post in the shared frame. Plot axes are
/// taken to be aligned with due east and due north.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PlotFrame {
    pub post_x: f64,
    pub post_y: f64,
}

pub fn to_shared_frame(record: &CensusRecord, frame: &PlotFrame) -> [f64; 2] {
    [
        frame.post_x + record.east_offset,
        frame.post_y + record.north_offset,
    ]
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchResult {
    /// `(cloud id, census tag)`, sorted by cloud id.
    pub pairs: Vec<(String, String)>,
    pub ambiguous_cells: usize,
    pub unmatched_clouds: usize,
    pub unmatched_records: usize,
    pub match_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchOptions {
    /// Grid spacing in meters; 1 m reproduces rounding to whole meters.
    pub cell_size: f64,
    pub include_dead: bool,
}

impl Default for MatchOptions {
    fn default() -> Self {
        Self {
            cell_size: 1.0,
            include_dead: false,
        }
    }
}

/// Integer cell of a planar location.
pub fn cell_of(location: [f64; 2], cell_size: f64) -> (i64, i64) {
    (
        (location[0] / cell_size).round() as i64,
        (location[1] / cell_size).round() as i64,
    )
}

/// Core one-to-one cell matcher over anonymous located ids. `left` plays
/// the role of clouds for the rate and unmatched counts.
pub fn match_cells(
    left: &[(String, [f64; 2])],
    right: &[(String, [f64; 2])],
    cell_size: f64,
) -> Result<MatchResult> {
    if !(cell_size.is_finite() && cell_size > 0.0) {
        return Err(Error::Config(format!(
            "cell size must be positive, got {cell_size}"
        )));
    }
    #[derive(Default)]
    struct Cell<'a> {
        left: Vec<&'a str>,
        right: Vec<&'a str>,
    }
    let mut cells: BTreeMap<(i64, i64), Cell> = BTreeMap::new();
    for (id, loc) in left {
        cells
            .entry(cell_of(*loc, cell_size))
            .or_default()
            .left
            .push(id);
    }
    for (id, loc) in right {
        cells
            .entry(cell_of(*loc, cell_size))
            .or_default()
            .right
            .push(id);
    }

    let mut pairs = Vec::new();
    let mut ambiguous_cells = 0;
    for cell in cells.values() {
        if cell.left.len() >= 2 || cell.right.len() >= 2 {
            ambiguous_cells += 1;
        } else if cell.left.len() == 1 && cell.right.len() == 1 {
            pairs.push((cell.left[0].to_string(), cell.right[0].to_string()));
        }
    }
    pairs.sort();
    let matched = pairs.len();
    Ok(MatchResult {
        pairs,
        ambiguous_cells,
        unmatched_clouds: left.len() - matched,
        unmatched_records: right.len() - matched,
        match_rate: if left.is_empty() {
            0.0
        } else {
            matched as f64 / left.len() as f64
        },
    })
}

/// Matches located clouds to census records placed in the shared frame.
/// Dead stems are skipped unless `options.include_dead` is set.
pub fn match_by_rounding(
    clouds: &[PointCloud],
    records: &[CensusRecord],
    frame: &PlotFrame,
    options: &MatchOptions,
) -> Result<MatchResult> {
    let left = clouds
        .iter()
        .map(|c| {
            c.location
                .map(|loc| (c.id.clone(), loc))
                .ok_or_else(|| Error::MissingLocation(c.id.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    let right = records
        .iter()
        .filter(|r| options.include_dead || r.alive)
        .map(|r| {
            let loc = to_shared_frame(r, frame);
            if loc[0].is_finite() && loc[1].is_finite() {
                Ok((r.tag.clone(), loc))
            } else {
                Err(Error::MissingLocation(r.tag.clone()))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    match_cells(&left, &right, options.cell_size)
}

/// Class names in index order. An open dictionary (the usual case) ends
/// with a catch-all `"other"` class that absorbs every unlisted species; a
/// closed one covers a known species set exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassDictionary {
    class_names: Vec<String>,
    index: HashMap<String, usize>,
    open: bool,
}

impl ClassDictionary {
    /// Builds an open dictionary from explicit species names; `"other"` is
    /// appended.
    pub fn from_species(species: Vec<String>) -> Self {
        let mut d = Self::closed(species);
        d.class_names.push(OTHER_CLASS.to_string());
        d.open = true;
        d
    }

    /// A dictionary with exactly these classes and no catch-all.
    pub fn closed(species: Vec<String>) -> Self {
        let index = species
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        Self {
            class_names: species,
            index,
            open: false,
        }
    }

    /// Rebuilds a dictionary from its full class list; a trailing `"other"`
    /// makes it open.
    pub fn from_class_names(mut names: Vec<String>) -> Self {
        if names.last().map(String::as_str) == Some(OTHER_CLASS) {
            names.pop();
            Self::from_species(names)
        } else {
            Self::closed(names)
        }
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn len(&self) -> usize {
        self.class_names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.class_names.is_empty()
    }

    pub fn is_open(&self) -> bool {
        self.open
    }

    pub fn other_index(&self) -> Option<usize> {
        self.open.then(|| self.class_names.len() - 1)
    }

    /// Class index of a species. Total for open dictionaries (unknown
    /// species fall into "other"); `None` for unknown species otherwise.
    pub fn index_of(&self, species: &str) -> Option<usize> {
        self.index
            .get(species)
            .copied()
            .or_else(|| self.other_index())
    }

    pub fn name(&self, class: usize) -> Option<&str> {
        self.class_names.get(class).map(String::as_str)
    }
}

/// Ranks species by how many matched images carry them (ties alphabetical)
/// and keeps the `top_k` most frequent as their own classes.
pub fn group_species<'a, I>(species: I, top_k: usize) -> Result<ClassDictionary>
where
    I: IntoIterator<Item = &'a str>,
{
    if top_k == 0 {
        return Err(Error::InvalidCount("top_k must be at least 1".into()));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for s in species {
        *counts.entry(s).or_default() += 1;
    }
    if counts.len() < top_k {
        return Err(Error::InsufficientSpecies {
            needed: top_k,
            found: counts.len(),
        });
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    Ok(ClassDictionary::from_species(
        ranked[..top_k].iter().map(|(s, _)| s.to_string()).collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pointcloud::Point3;
    use crate::rng::seeded;
    use proptest::prelude::*;
    use rand::Rng;

    fn record(tag: &str, e: f64, n: f64) -> CensusRecord {
        CensusRecord {
            tag: tag.into(),
            species: "A".into(),
            east_offset: e,
            north_offset: n,
            dbh: None,
            alive: true,
        }
    }

    fn located(id: &str, x: f64, y: f64) -> PointCloud {
        PointCloud::new(id, vec![Point3::default()])
            .unwrap()
            .with_location(x, y)
    }

    #[test]
    fn shared_frame_examples() {
        let f = PlotFrame {
            post_x: 100.0,
            post_y: 200.0,
        };
        assert_eq!(to_shared_frame(&record("t", 3.2, 4.5), &f), [103.2, 204.5]);
        assert_eq!(to_shared_frame(&record("t", 0.0, 0.0), &f), [100.0, 200.0]);
        let shifted = PlotFrame {
            post_x: 107.0,
            post_y: 190.0,
        };
        let a = to_shared_frame(&record("t", 3.0, 4.0), &f);
        let b = to_shared_frame(&record("t", 3.0, 4.0), &shifted);
        assert_eq!([b[0] - a[0], b[1] - a[1]], [7.0, -10.0]);
    }

    #[test]
    fn rounding_match_example() {
        let clouds = vec![located("c1", 536201.4, 120.6)];
        let recs = vec![record("r1", 536200.9, 121.2)];
        let m = match_by_rounding(
            &clouds,
            &recs,
            &PlotFrame::default(),
            &MatchOptions::default(),
        )
        .unwrap();
        assert_eq!(m.pairs, vec![("c1".to_string(), "r1".to_string())]);
        assert_eq!(m.match_rate, 1.0);
        assert_eq!(m.unmatched_clouds, 0);
    }

    #[test]
    fn crowded_cell_is_dropped() {
        let clouds = vec![located("c1", 10.1, 10.0)];
        let recs = vec![record("r1", 9.8, 10.2), record("r2", 10.3, 9.9)];
        let m = match_by_rounding(
            &clouds,
            &recs,
            &PlotFrame::default(),
            &MatchOptions::default(),
        )
        .unwrap();
        assert!(m.pairs.is_empty());
        assert_eq!(m.ambiguous_cells, 1);
        assert_eq!(m.unmatched_clouds, 1);
        assert_eq!(m.unmatched_records, 2);
    }

    #[test]
    fn half_rounds_away_from_zero() {
        assert_eq!(cell_of([0.5, -0.5], 1.0), (1, -1));
        assert_eq!(cell_of([2.5, -2.5], 1.0), (3, -3));
        assert_eq!(cell_of([4.9, 5.1], 2.0), (2, 3));
    }

    #[test]
    fn dead_stems_skipped_by_default() {
        let clouds = vec![located("c1", 1.0, 1.0)];
        let mut dead = record("r1", 1.0, 1.0);
        dead.alive = false;
        let m = match_by_rounding(
            &clouds,
            &[dead.clone()],
            &PlotFrame::default(),
            &MatchOptions::default(),
        )
        .unwrap();
        assert!(m.pairs.is_empty());
        let opts = MatchOptions {
            include_dead: true,
            ..Default::default()
        };
        let m = match_by_rounding(&clouds, &[dead], &PlotFrame::default(), &opts).unwrap();
        assert_eq!(m.pairs.len(), 1);
    }

    #[test]
    fn missing_location_is_an_error() {
        let c = PointCloud::new("c", vec![Point3::default()]).unwrap();
        let e = match_by_rounding(&[c], &[], &PlotFrame::default(), &MatchOptions::default());
        assert!(matches!(e, Err(Error::MissingLocation(id)) if id == "c"));
    }

    #[test]
    fn group_species_examples() {
        let counts = [
            ("A", 50),
            ("B", 30),
            ("C", 10),
            ("D", 5),
            ("E", 3),
            ("F", 1),
            ("G", 1),
        ];
        let list: Vec<&str> = counts
            .iter()
            .flat_map(|&(s, n)| std::iter::repeat_n(s, n))
            .collect();
        let d = group_species(list.iter().copied(), 5).unwrap();
        assert_eq!(d.class_names(), ["A", "B", "C", "D", "E", "other"]);
        assert_eq!(d.index_of("F"), Some(5));
        assert_eq!(d.index_of("G"), Some(5));
        assert_eq!(d.index_of("never seen"), Some(5));
        assert_eq!(d.index_of("C"), Some(2));

        let one = group_species(["X", "X"], 1).unwrap();
        assert_eq!(one.class_names(), ["X", "other"]);

        assert!(matches!(
            group_species(["A", "B"], 3),
            Err(Error::InsufficientSpecies {
                needed: 3,
                found: 2
            })
        ));
    }

    #[test]
    fn group_species_ties_alphabetical() {
        let d = group_species(["b", "a", "c", "c"], 2).unwrap();
        assert_eq!(d.class_names(), ["c", "a", "other"]);
    }

    #[test]
    fn closed_dictionary_has_no_catch_all() {
        let d = ClassDictionary::closed(vec!["u".into(), "s".into()]);
        assert_eq!(d.len(), 2);
        assert_eq!(d.other_index(), None);
        assert_eq!(d.index_of("s"), Some(1));
        assert_eq!(d.index_of("zzz"), None);
        let names = |d: &ClassDictionary| d.class_names().to_vec();
        assert_eq!(ClassDictionary::from_class_names(names(&d)), d);
        let open = ClassDictionary::from_species(vec!["u".into()]);
        assert_eq!(ClassDictionary::from_class_names(names(&open)), open);
    }

    fn random_sites(seed: u64, n: usize, prefix: &str) -> Vec<(String, [f64; 2])> {
        let mut rng = seeded(seed);
        (0..n)
            .map(|i| {
                (
                    format!("{prefix}{i}"),
                    [rng.random_range(0.0..30.0), rng.random_range(0.0..30.0)],
                )
            })
            .collect()
    }

    proptest! {
        #[test]
        fn symmetric_under_swap(seed in any::<u64>()) {
            let a = random_sites(seed, 200, "c");
            let b = random_sites(seed.wrapping_add(1), 200, "r");
            let ab = match_cells(&a, &b, 1.0).unwrap();
            let ba = match_cells(&b, &a, 1.0).unwrap();
            let mut swapped: Vec<_> = ba.pairs.iter().map(|(r, c)| (c.clone(), r.clone())).collect();
            swapped.sort();
            prop_assert_eq!(ab.pairs.clone(), swapped);
            prop_assert_eq!(ab.ambiguous_cells, ba.ambiguous_cells);
        }

        #[test]
        fn integer_translation_invariant(seed in any::<u64>(), dx in -1000i32..1000, dy in -1000i32..1000) {
            let a = random_sites(seed, 150, "c");
            let b = random_sites(seed ^ 0xff, 150, "r");
            let shift = |v: &[(String, [f64; 2])]| {
                v.iter()
                    .map(|(id, p)| (id.clone(), [p[0] + dx as f64, p[1] + dy as f64]))
                    .collect::<Vec<_>>()
            };
            let before = match_cells(&a, &b, 1.0).unwrap();
            let after = match_cells(&shift(&a), &shift(&b), 1.0).unwrap();
            prop_assert_eq!(before.pairs, after.pairs);
        }

        #[test]
        fn never_matches_twice(seed in any::<u64>(), cell in 1.0f64..4.0) {
            let a = random_sites(seed, 300, "c");
            let b = random_sites(!seed, 300, "r");
            let m = match_cells(&a, &b, cell).unwrap();
            let mut left: Vec<_> = m.pairs.iter().map(|p| &p.0).collect();
            let mut right: Vec<_> = m.pairs.iter().map(|p| &p.1).collect();
            left.dedup();
            right.sort();
            right.dedup();
            prop_assert_eq!(left.len(), m.pairs.len());
            prop_assert_eq!(right.len(), m.pairs.len());
            prop_assert!((m.match_rate - m.pairs.len() as f64 / 300.0).abs() < 1e-15);
        }
    }
}
