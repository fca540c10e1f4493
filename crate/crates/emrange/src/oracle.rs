//! In-memory brute-force reference set: ground truth for every query kind
//! and the replay target of all property tests.

use thiserror::Error;

use crate::rec::{sort_by_y_desc, Point};

#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum OracleError {
    #[error("duplicate point (x={0}, id={1})")]
    Duplicate(i64, u64),
    #[error("absent point (x={0}, id={1})")]
    Absent(i64, u64),
}

/// Flat point set with (x,id) uniqueness and linear-scan queries.
#[derive(Clone, Debug, Default)]
pub struct OracleSet {
    pts: Vec<Point>,
}

impl OracleSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.pts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pts.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.pts
    }

    pub fn o_insert(&mut self, p: Point) -> Result<(), OracleError> {
        if self.pts.iter().any(|q| q.x == p.x && q.id == p.id) {
            return Err(OracleError::Duplicate(p.x, p.id));
        }
        self.pts.push(p);
        Ok(())
    }

    pub fn o_delete(&mut self, p: Point) -> Result<(), OracleError> {
        match self.pts.iter().position(|q| q == &p) {
            Some(i) => {
                self.pts.swap_remove(i);
                Ok(())
            }
            None => Err(OracleError::Absent(p.x, p.id)),
        }
    }

    /// Points with a <= x <= b and y >= c, sorted by (x,id).
    pub fn o_query3s(&self, a: i64, b: i64, c: i64) -> Vec<Point> {
        let mut out: Vec<Point> = self
            .pts
            .iter()
            .filter(|p| a <= p.x && p.x <= b && p.y >= c)
            .copied()
            .collect();
        out.sort_by_key(|p| p.xkey());
        out
    }

    /// Points with a <= x <= b and c <= y <= d, sorted by (x,id).
    pub fn o_query2d(&self, a: i64, b: i64, c: i64, d: i64) -> Vec<Point> {
        let mut out: Vec<Point> = self
            .pts
            .iter()
            .filter(|p| a <= p.x && p.x <= b && c <= p.y && p.y <= d)
            .copied()
            .collect();
        out.sort_by_key(|p| p.xkey());
        out
    }

    /// The t largest points by (y,id), in descending order.
    pub fn o_top_by_y(&self, t: usize) -> Vec<Point> {
        let mut all = self.pts.clone();
        sort_by_y_desc(&mut all);
        all.truncate(t);
        all
    }
}

/// Canonical form for answer comparison: sorted by (x,id).
pub fn canon(mut pts: Vec<Point>) -> Vec<Point> {
    pts.sort_by_key(|p| p.xkey());
    pts
}
