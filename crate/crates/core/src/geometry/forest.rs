use rayon::prelude::*;
use serde::Serialize;

use super::{clip_to_cells, map_shape, CellAffine, Partition2D, Point, Segment, Shape, SliverPolicy};
use crate::error::CmlError;
use crate::lattice::Lattice;

pub const DEFAULT_COMPONENT_CAP: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub shape: Shape,
    pub cell: usize,
    pub depth: usize,
    /// Index of the component at `depth - 1` this one came from.
    pub parent: Option<usize>,
}

impl Component {
    pub fn root(shape: Shape, cell: usize) -> Self {
        Component {
            shape,
            cell,
            depth: 0,
            parent: None,
        }
    }

    pub fn measure(&self) -> f64 {
        self.shape.measure()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForestOptions {
    /// Maximum number of components allowed at any depth.
    pub cap: usize,
    pub sliver: SliverPolicy,
}

impl Default for ForestOptions {
    fn default() -> Self {
        ForestOptions {
            cap: DEFAULT_COMPONENT_CAP,
            sliver: SliverPolicy::default(),
        }
    }
}

/// All components of `T^i(S)` for `i = 0..=k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentForest {
    pub levels: Vec<Vec<Component>>,
    /// Measure discarded as slivers at each depth.
    pub dropped_measure: Vec<f64>,
    pub dropped_count: Vec<usize>,
    pub cells_per_axis: usize,
}

/// One line of the JSON-lines export.
#[derive(Debug, Clone, Serialize)]
pub struct ComponentRecord {
    pub depth: usize,
    pub index: usize,
    pub cell: usize,
    pub parent: Option<usize>,
    pub kind: &'static str,
    pub vertices: Vec<[f64; 2]>,
    pub measure: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DepthSummary {
    pub depth: usize,
    pub count: usize,
    pub total_measure: f64,
    pub dropped_measure: f64,
    pub dropped_count: usize,
}

impl ComponentForest {
    pub fn max_depth(&self) -> usize {
        self.levels.len().saturating_sub(1)
    }

    pub fn counts(&self) -> Vec<usize> {
        self.levels.iter().map(Vec::len).collect()
    }

    pub fn measures(&self) -> Vec<f64> {
        self.levels
            .iter()
            .map(|l| l.iter().map(Component::measure).sum())
            .collect()
    }

    /// Cell sequence from the root down to the given component.
    pub fn itinerary(&self, depth: usize, index: usize) -> Vec<usize> {
        let mut out = vec![0; depth + 1];
        let mut idx = index;
        for d in (0..=depth).rev() {
            let c = &self.levels[d][idx];
            out[d] = c.cell;
            if let Some(p) = c.parent {
                idx = p;
            }
        }
        out
    }

    /// Index at depth `d` of the ancestor of every component at depth `d + m`.
    pub fn ancestors(&self, d: usize, m: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.levels[d + m].len()).collect();
        for level in (d + 1..=d + m).rev() {
            for i in idx.iter_mut() {
                *i = self.levels[level][*i].parent.expect("non-root component has a parent");
            }
        }
        idx
    }

    pub fn records(&self) -> impl Iterator<Item = ComponentRecord> + '_ {
        self.levels.iter().enumerate().flat_map(|(d, level)| {
            level.iter().enumerate().map(move |(i, c)| ComponentRecord {
                depth: d,
                index: i,
                cell: c.cell,
                parent: c.parent,
                kind: match c.shape {
                    Shape::Polygon(_) => "polygon",
                    Shape::Segment(_) => "segment",
                },
                vertices: c.shape.points().iter().map(|p| [p.x, p.y]).collect(),
                measure: c.measure(),
            })
        })
    }

    pub fn summary(&self) -> Vec<DepthSummary> {
        let measures = self.measures();
        (0..self.levels.len())
            .map(|d| DepthSummary {
                depth: d,
                count: self.levels[d].len(),
                total_measure: measures[d],
                dropped_measure: self.dropped_measure[d],
                dropped_count: self.dropped_count[d],
            })
            .collect()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ForestError {
    #[error(transparent)]
    Cml(#[from] CmlError),
    #[error("component count {count} at depth {depth} exceeds the cap {cap}")]
    CapExceeded {
        cap: usize,
        depth: usize,
        count: usize,
        partial: Box<ComponentForest>,
    },
}

impl From<ForestError> for CmlError {
    fn from(e: ForestError) -> Self {
        match e {
            ForestError::Cml(e) => e,
            e @ ForestError::CapExceeded { .. } => CmlError::CapExceeded(e.to_string()),
        }
    }
}

/// Builds the component forest of `shape` down to depth `k` under the two-node lattice.
pub fn iterate_components(
    shape: &Shape,
    lat: &Lattice,
    k: usize,
    opts: &ForestOptions,
) -> Result<ComponentForest, ForestError> {
    if k == 0 {
        return Err(CmlError::Usage("iteration depth must be at least 1".into()).into());
    }
    let part = Partition2D::for_map(lat.map());
    let affines = (0..part.cell_count())
        .map(|cell| CellAffine::for_cell(lat, &part, cell))
        .collect::<crate::Result<Vec<_>>>()?;

    let root = clip_to_cells(shape, &part, &opts.sliver)?;
    let mut forest = ComponentForest {
        levels: vec![root
            .pieces
            .into_iter()
            .map(|(cell, s)| Component::root(s, cell))
            .collect()],
        dropped_measure: vec![root.dropped_measure],
        dropped_count: vec![root.dropped_count],
        cells_per_axis: part.k(),
    };

    for depth in 1..=k {
        let prev = forest.levels.last().expect("root level");
        let children: Vec<_> = prev
            .par_iter()
            .enumerate()
            .map(|(i, comp)| {
                let img = map_shape(&comp.shape, &affines[comp.cell])?;
                let clipped = clip_to_cells(&img, &part, &opts.sliver)?;
                Ok((i, clipped))
            })
            .collect::<crate::Result<Vec<_>>>()?;

        let mut level = Vec::new();
        let (mut dropped, mut ndropped) = (0.0, 0);
        for (parent, clipped) in children {
            dropped += clipped.dropped_measure;
            ndropped += clipped.dropped_count;
            level.extend(clipped.pieces.into_iter().map(|(cell, shape)| Component {
                shape,
                cell,
                depth,
                parent: Some(parent),
            }));
        }
        if level.len() > opts.cap {
            return Err(ForestError::CapExceeded {
                cap: opts.cap,
                depth,
                count: level.len(),
                partial: Box::new(forest),
            });
        }
        forest.levels.push(level);
        forest.dropped_measure.push(dropped);
        forest.dropped_count.push(ndropped);
    }
    Ok(forest)
}

/// Forest of a segment and its images.
pub fn segment_iterate(
    seg: &Segment,
    lat: &Lattice,
    k: usize,
    opts: &ForestOptions,
) -> Result<ComponentForest, ForestError> {
    iterate_components(&Shape::Segment(*seg), lat, k, opts)
}

/// Whether `p` lands in the given component's shape after following the same
/// cells; used by point-sampling oracles.
pub fn follow_itinerary(lat: &Lattice, p: Point, cells: &[usize]) -> Option<Point> {
    let part = Partition2D::for_map(lat.map());
    let mut q = p;
    for &cell in cells {
        if part.locate(q).ok()? != cell {
            return None;
        }
        let s = lat.step(&crate::lattice::State { x: vec![q.x, q.y] }).ok()?;
        q = Point::new(s.x[0], s.x[1]);
    }
    Some(q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ConvexPolygon;
    use crate::maps::MapKind;
    use approx::assert_relative_eq;

    fn square(a: f64, b: f64) -> Shape {
        Shape::Polygon(ConvexPolygon::rect(a, b, a, b).unwrap())
    }

    #[test]
    fn single_cell_counts() {
        let lat = Lattice::two_node(MapKind::Doubling2, 0.1).unwrap();
        let f = iterate_components(&square(0.1, 0.12), &lat, 1, &ForestOptions::default()).unwrap();
        assert_eq!(f.counts(), vec![1, 1]);
    }

    #[test]
    fn measure_grows_by_det_times_k_squared() {
        for (kind, k2) in [(MapKind::Doubling2, 4.0), (MapKind::Triple3, 9.0)] {
            for c in [0.0, 0.1, 0.2] {
                let lat = Lattice::two_node(kind, c).unwrap();
                let f = iterate_components(&square(0.13, 0.31), &lat, 3, &ForestOptions::default())
                    .unwrap();
                let m = f.measures();
                for w in m.windows(2) {
                    assert_relative_eq!(w[1], k2 * (1.0 - 2.0 * c) * w[0], max_relative = 1e-9);
                }
            }
        }
    }

    #[test]
    fn cap_returns_partial_forest() {
        let lat = Lattice::two_node(MapKind::Doubling2, 0.05).unwrap();
        let opts = ForestOptions {
            cap: 10,
            ..ForestOptions::default()
        };
        match iterate_components(&square(0.2, 0.45), &lat, 8, &opts) {
            Err(ForestError::CapExceeded { partial, depth, .. }) => {
                assert_eq!(partial.levels.len(), depth);
                assert!(partial.counts().iter().all(|&n| n <= 10));
            }
            other => panic!("expected cap error, got {other:?}"),
        }
    }

    #[test]
    fn diagonal_segment_stays_diagonal() {
        let lat = Lattice::two_node(MapKind::Doubling2, 0.2).unwrap();
        let seg = Segment::new(Point::new(0.1, 0.1), Point::new(0.3, 0.3)).unwrap();
        let f = segment_iterate(&seg, &lat, 4, &ForestOptions::default()).unwrap();
        let m = f.measures();
        for w in m.windows(2) {
            assert_relative_eq!(w[1], 2.0 * w[0], max_relative = 1e-12);
        }
        for c in f.levels.iter().flatten() {
            for p in c.shape.points() {
                assert_eq!(p.x, p.y);
            }
        }
    }

    #[test]
    fn antidiagonal_stays_on_invariant_line() {
        let lat = Lattice::two_node(MapKind::Doubling2, 0.2).unwrap();
        let seg = Segment::new(Point::new(0.4, 0.6), Point::new(0.6, 0.4)).unwrap();
        let f = segment_iterate(&seg, &lat, 3, &ForestOptions::default()).unwrap();
        for c in f.levels.iter().flatten() {
            for p in c.shape.points() {
                assert!((p.x + p.y - 1.0).abs() < 1e-12, "{p:?}");
            }
        }
    }

    #[test]
    fn itinerary_follows_parents() {
        let lat = Lattice::two_node(MapKind::Doubling2, 0.1).unwrap();
        let f = iterate_components(&square(0.4, 0.6), &lat, 2, &ForestOptions::default()).unwrap();
        let it = f.itinerary(2, 0);
        assert_eq!(it.len(), 3);
        assert_eq!(it[2], f.levels[2][0].cell);
        let anc = f.ancestors(0, 2);
        assert_eq!(anc.len(), f.levels[2].len());
    }
}
