//! Combinatorial complexes: ranked cells, an explicit incidence relation, and
//! boundary / co-boundary / neighborhood queries.
//!
//! The incidence relation is stored extensionally: a pair is a face relation
//! if and only if it was inserted. Builders that want cross-rank visibility
//! (e.g. joint -> group cell) insert those pairs themselves. After `freeze`
//! the structure is immutable and may be read from any number of threads.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Identifier of a cell, dense within one complex (assigned in insertion
/// order, never reused).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellId(pub u32);

impl CellId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Persistent entity identifier carried by cells that belong to a tracked
/// scene entity (used for temporal linking and relation decoding).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EntityId(pub u32);

/// What a cell is; the kind fixes the rank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellKind {
    Joint,
    Object,
    EvidenceRobotLog,
    EvidenceAudio,
    EvidenceScreen,
    SkeletonEdge,
    SpatialEdge,
    SemanticEdge,
    EvidenceEdge,
    TemporalEdge,
    PersonCell,
    FunctionalCell,
}

impl CellKind {
    pub fn expected_rank(self) -> usize {
        match self {
            CellKind::Joint
            | CellKind::Object
            | CellKind::EvidenceRobotLog
            | CellKind::EvidenceAudio
            | CellKind::EvidenceScreen => 0,
            CellKind::SkeletonEdge
            | CellKind::SpatialEdge
            | CellKind::SemanticEdge
            | CellKind::EvidenceEdge
            | CellKind::TemporalEdge => 1,
            CellKind::PersonCell | CellKind::FunctionalCell => 2,
        }
    }

    /// Physical rank-0 kinds carry a 3-D position; everything else must not.
    pub fn requires_position(self) -> bool {
        matches!(self, CellKind::Joint | CellKind::Object)
    }

    pub const ALL: [CellKind; 12] = [
        CellKind::Joint,
        CellKind::Object,
        CellKind::EvidenceRobotLog,
        CellKind::EvidenceAudio,
        CellKind::EvidenceScreen,
        CellKind::SkeletonEdge,
        CellKind::SpatialEdge,
        CellKind::SemanticEdge,
        CellKind::EvidenceEdge,
        CellKind::TemporalEdge,
        CellKind::PersonCell,
        CellKind::FunctionalCell,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub id: CellId,
    pub rank: usize,
    pub kind: CellKind,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub position: Option<[f64; 3]>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub entity_id: Option<EntityId>,
    pub raw_feature: Vec<f64>,
}

#[derive(Debug, Error)]
pub enum CcError {
    #[error("cell id {0:?} already present")]
    DuplicateId(CellId),
    #[error("cell id {id:?} breaks dense insertion order (next free id is {next})")]
    NonContiguousId { id: CellId, next: u32 },
    #[error("kind {kind:?} requires rank {expected}, got {got} (cell {id:?})")]
    KindRankMismatch {
        id: CellId,
        kind: CellKind,
        expected: usize,
        got: usize,
    },
    #[error("cell {id:?} of kind {kind:?} violates the position rule (position present: {present})")]
    PositionRule {
        id: CellId,
        kind: CellKind,
        present: bool,
    },
    #[error("cell {0:?} has a non-finite position or feature")]
    NonFiniteCell(CellId),
    #[error("cell {0:?} not found")]
    MissingCell(CellId),
    #[error("incidence ({lower:?}, {upper:?}) violates strict rank order ({lower_rank} >= {upper_rank})")]
    RankOrderViolation {
        lower: CellId,
        upper: CellId,
        lower_rank: usize,
        upper_rank: usize,
    },
    #[error("incidence pair ({0:?}, {1:?}) already present")]
    DuplicatePair(CellId, CellId),
    #[error("complex fails validation: {0}")]
    Invalid(String),
}

/// One broken invariant found by [`CombinatorialComplex::validate`].
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub rule: &'static str,
    pub detail: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.rule, self.detail)
    }
}

/// Mutable cell complex under construction. Cells partition by rank via
/// `rank_index`; incidence pairs are kept in both orientations for
/// logarithmic boundary and co-boundary queries.
#[derive(Debug, Clone, Default)]
pub struct CombinatorialComplex {
    cells: BTreeMap<CellId, Cell>,
    incidence: BTreeSet<(CellId, CellId)>,
    incidence_rev: BTreeSet<(CellId, CellId)>,
    rank_index: BTreeMap<usize, BTreeSet<CellId>>,
}

impl CombinatorialComplex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn incidence_len(&self) -> usize {
        self.incidence.len()
    }

    pub fn next_id(&self) -> CellId {
        CellId(self.cells.len() as u32)
    }

    pub fn cell(&self, id: CellId) -> Option<&Cell> {
        self.cells.get(&id)
    }

    pub fn cell_mut(&mut self, id: CellId) -> Option<&mut Cell> {
        self.cells.get_mut(&id)
    }

    pub fn cells(&self) -> impl Iterator<Item = &Cell> {
        self.cells.values()
    }

    pub fn incidence_pairs(&self) -> impl Iterator<Item = (CellId, CellId)> + '_ {
        self.incidence.iter().copied()
    }

    pub fn rank_members(&self, rank: usize) -> BTreeSet<CellId> {
        self.rank_index.get(&rank).cloned().unwrap_or_default()
    }

    pub fn max_rank(&self) -> usize {
        self.rank_index.keys().max().copied().unwrap_or(0)
    }

    /// Inserts a fully specified cell. Ids must arrive in dense insertion
    /// order; kind/rank and the position rule are enforced here.
    pub fn add_cell(&mut self, cell: Cell) -> Result<CellId, CcError> {
        let next = self.cells.len() as u32;
        if self.cells.contains_key(&cell.id) {
            return Err(CcError::DuplicateId(cell.id));
        }
        if cell.id.0 != next {
            return Err(CcError::NonContiguousId { id: cell.id, next });
        }
        let expected = cell.kind.expected_rank();
        if cell.rank != expected {
            return Err(CcError::KindRankMismatch {
                id: cell.id,
                kind: cell.kind,
                expected,
                got: cell.rank,
            });
        }
        if cell.position.is_some() != cell.kind.requires_position() {
            return Err(CcError::PositionRule {
                id: cell.id,
                kind: cell.kind,
                present: cell.position.is_some(),
            });
        }
        if !cell_finite(&cell) {
            return Err(CcError::NonFiniteCell(cell.id));
        }
        self.rank_index.entry(cell.rank).or_default().insert(cell.id);
        self.cells.insert(cell.id, cell);
        Ok(CellId(next))
    }

    /// Convenience: allocates the next dense id and derives rank from kind.
    pub fn push_cell(
        &mut self,
        kind: CellKind,
        position: Option<[f64; 3]>,
        entity_id: Option<EntityId>,
        raw_feature: Vec<f64>,
    ) -> Result<CellId, CcError> {
        self.add_cell(Cell {
            id: self.next_id(),
            rank: kind.expected_rank(),
            kind,
            position,
            entity_id,
            raw_feature,
        })
    }

    pub fn add_incidence(&mut self, lower: CellId, upper: CellId) -> Result<(), CcError> {
        let lower_rank = self
            .cells
            .get(&lower)
            .ok_or(CcError::MissingCell(lower))?
            .rank;
        let upper_rank = self
            .cells
            .get(&upper)
            .ok_or(CcError::MissingCell(upper))?
            .rank;
        if lower_rank >= upper_rank {
            return Err(CcError::RankOrderViolation {
                lower,
                upper,
                lower_rank,
                upper_rank,
            });
        }
        if !self.incidence.insert((lower, upper)) {
            return Err(CcError::DuplicatePair(lower, upper));
        }
        self.incidence_rev.insert((upper, lower));
        Ok(())
    }

    /// Cells of strictly lower rank incident to `y`.
    pub fn boundary(&self, y: CellId) -> Result<BTreeSet<CellId>, CcError> {
        if !self.cells.contains_key(&y) {
            return Err(CcError::MissingCell(y));
        }
        Ok(self
            .incidence_rev
            .range((y, CellId(0))..=(y, CellId(u32::MAX)))
            .map(|&(_, lower)| lower)
            .collect())
    }

    /// Cells of strictly higher rank incident to `y`.
    pub fn coboundary(&self, y: CellId) -> Result<BTreeSet<CellId>, CcError> {
        if !self.cells.contains_key(&y) {
            return Err(CcError::MissingCell(y));
        }
        Ok(self
            .incidence
            .range((y, CellId(0))..=(y, CellId(u32::MAX)))
            .map(|&(_, upper)| upper)
            .collect())
    }

    /// Full incidence neighborhood: boundary union co-boundary, excluding `y`
    /// itself (strict rank order makes the two sets disjoint).
    pub fn neighborhood(&self, y: CellId) -> Result<BTreeSet<CellId>, CcError> {
        let mut set = self.boundary(y)?;
        set.extend(self.coboundary(y)?);
        Ok(set)
    }

    /// Checks every structural invariant, returning one entry per breach.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        for cell in self.cells.values() {
            let expected = cell.kind.expected_rank();
            if cell.rank != expected {
                out.push(Violation {
                    rule: "KindRankMismatch",
                    detail: format!(
                        "cell {:?} kind {:?} has rank {}, expected {}",
                        cell.id, cell.kind, cell.rank, expected
                    ),
                });
            }
            if cell.position.is_some() != cell.kind.requires_position() {
                out.push(Violation {
                    rule: "PositionRule",
                    detail: format!(
                        "cell {:?} kind {:?} position present: {}",
                        cell.id,
                        cell.kind,
                        cell.position.is_some()
                    ),
                });
            }
            if !cell_finite(cell) {
                out.push(Violation {
                    rule: "NonFiniteCell",
                    detail: format!("cell {:?} carries non-finite values", cell.id),
                });
            }
        }
        // rank_index must be exactly the partition of cells by rank.
        let mut indexed = 0usize;
        for (&rank, members) in &self.rank_index {
            indexed += members.len();
            for &id in members {
                match self.cells.get(&id) {
                    None => out.push(Violation {
                        rule: "PartitionMismatch",
                        detail: format!("rank_index[{}] lists missing cell {:?}", rank, id),
                    }),
                    Some(c) if c.rank != rank => out.push(Violation {
                        rule: "PartitionMismatch",
                        detail: format!(
                            "rank_index[{}] lists cell {:?} whose rank is {}",
                            rank, id, c.rank
                        ),
                    }),
                    Some(_) => {}
                }
            }
        }
        if indexed != self.cells.len() {
            for cell in self.cells.values() {
                let listed = self
                    .rank_index
                    .get(&cell.rank)
                    .is_some_and(|m| m.contains(&cell.id));
                if !listed {
                    out.push(Violation {
                        rule: "PartitionMismatch",
                        detail: format!("cell {:?} missing from rank_index[{}]", cell.id, cell.rank),
                    });
                }
            }
        }
        for &(lower, upper) in &self.incidence {
            let lr = self.cells.get(&lower).map(|c| c.rank);
            let ur = self.cells.get(&upper).map(|c| c.rank);
            match (lr, ur) {
                (None, _) => out.push(Violation {
                    rule: "MissingCell",
                    detail: format!("incidence ({:?}, {:?}): lower endpoint missing", lower, upper),
                }),
                (_, None) => out.push(Violation {
                    rule: "MissingCell",
                    detail: format!("incidence ({:?}, {:?}): upper endpoint missing", lower, upper),
                }),
                (Some(lr), Some(ur)) if lr >= ur => out.push(Violation {
                    rule: "RankOrderViolation",
                    detail: format!(
                        "incidence ({:?}, {:?}) has ranks {} >= {}",
                        lower, upper, lr, ur
                    ),
                }),
                _ => {}
            }
        }
        out
    }

    /// Assembles a complex exactly as given, without invariant checks, so
    /// loaders can surface problems through `validate` instead of refusing
    /// the file. Returns load-level violations (duplicate ids or pairs) that
    /// the assembled structure can no longer represent.
    pub fn from_parts_unchecked(
        cells: Vec<Cell>,
        incidence: Vec<(CellId, CellId)>,
    ) -> (Self, Vec<Violation>) {
        let mut out = CombinatorialComplex::new();
        let mut violations = Vec::new();
        for cell in cells {
            if out.cells.contains_key(&cell.id) {
                violations.push(Violation {
                    rule: "DuplicateId",
                    detail: format!("cell id {:?} appears more than once", cell.id),
                });
                continue;
            }
            out.rank_index.entry(cell.rank).or_default().insert(cell.id);
            out.cells.insert(cell.id, cell);
        }
        for (lower, upper) in incidence {
            if !out.incidence.insert((lower, upper)) {
                violations.push(Violation {
                    rule: "DuplicatePair",
                    detail: format!("incidence ({:?}, {:?}) appears more than once", lower, upper),
                });
                continue;
            }
            out.incidence_rev.insert((upper, lower));
        }
        (out, violations)
    }

    /// Validates and converts into the immutable, query-optimized form.
    pub fn freeze(self) -> Result<FrozenComplex, CcError> {
        let violations = self.validate();
        if !violations.is_empty() {
            let summary: Vec<String> = violations.iter().take(3).map(|v| v.to_string()).collect();
            return Err(CcError::Invalid(format!(
                "{} violation(s), first: {}",
                violations.len(),
                summary.join("; ")
            )));
        }
        let n = self.cells.len();
        let mut cells = Vec::with_capacity(n);
        for (i, (&id, cell)) in self.cells.iter().enumerate() {
            if id.index() != i {
                return Err(CcError::NonContiguousId {
                    id,
                    next: i as u32,
                });
            }
            cells.push(cell.clone());
        }
        let mut boundary = vec![Vec::new(); n];
        let mut coboundary = vec![Vec::new(); n];
        for &(lower, upper) in &self.incidence {
            boundary[upper.index()].push(lower);
            coboundary[lower.index()].push(upper);
        }
        // BTreeSet iteration is sorted by (first, second), so both adjacency
        // lists come out sorted without an extra pass.
        let max_rank = cells.iter().map(|c| c.rank).max().unwrap_or(0);
        let mut rank_rows = vec![Vec::new(); max_rank + 1];
        for cell in &cells {
            rank_rows[cell.rank].push(cell.id.index());
        }
        Ok(FrozenComplex {
            cells,
            boundary,
            coboundary,
            rank_rows,
            incidence_count: self.incidence.len(),
        })
    }
}

fn cell_finite(cell: &Cell) -> bool {
    cell.position
        .is_none_or(|p| p.iter().all(|x| x.is_finite()))
        && cell.raw_feature.iter().all(|x| x.is_finite())
}

/// Immutable complex with dense ids and precomputed adjacency; safe to share
/// across threads for concurrent reads.
#[derive(Debug, Clone)]
pub struct FrozenComplex {
    cells: Vec<Cell>,
    boundary: Vec<Vec<CellId>>,
    coboundary: Vec<Vec<CellId>>,
    rank_rows: Vec<Vec<usize>>,
    incidence_count: usize,
}

impl FrozenComplex {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn incidence_len(&self) -> usize {
        self.incidence_count
    }

    pub fn cell(&self, id: CellId) -> &Cell {
        &self.cells[id.index()]
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn boundary(&self, id: CellId) -> &[CellId] {
        &self.boundary[id.index()]
    }

    pub fn coboundary(&self, id: CellId) -> &[CellId] {
        &self.coboundary[id.index()]
    }

    /// Sorted row indices of N(y): boundary then co-boundary.
    pub fn neighborhood_rows(&self, id: CellId) -> Vec<usize> {
        let mut rows: Vec<usize> = self.boundary[id.index()]
            .iter()
            .chain(&self.coboundary[id.index()])
            .map(|c| c.index())
            .collect();
        rows.sort_unstable();
        rows
    }

    /// Per-cell attention support N(y) + {y}, sorted row indices.
    pub fn attention_support(&self) -> Vec<Vec<usize>> {
        (0..self.cells.len())
            .map(|i| {
                let mut rows = self.neighborhood_rows(CellId(i as u32));
                let pos = rows.binary_search(&i).unwrap_or_else(|e| e);
                rows.insert(pos, i);
                rows
            })
            .collect()
    }

    /// Number of distinct ranks spanned (always max rank + 1 slots).
    pub fn rank_count(&self) -> usize {
        self.rank_rows.len()
    }

    pub fn rank_rows(&self, rank: usize) -> &[usize] {
        self.rank_rows
            .get(rank)
            .map(|v| v.as_slice())
            .unwrap_or(&[])
    }

    pub fn ranks(&self) -> Vec<usize> {
        self.cells.iter().map(|c| c.rank).collect()
    }
}
