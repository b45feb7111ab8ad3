//! Sliding keyframe window with angular admission and spread-preserving eviction.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::geom::Vec3;

/// Views exactly at the threshold angle count as far enough.
const ADMIT_SLACK: f64 = 1e-9;

/// A window entry: the frame id and its unit view vector (target to camera,
/// object frame).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Keyframe {
    pub frame_id: usize,
    pub view: Vec3,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IngestOutcome {
    pub admitted: bool,
    pub evicted: Option<Keyframe>,
}

/// Newest frame first. Positions 0 and 1 are never evicted.
#[derive(Clone, Debug)]
pub struct KeyframeWindow {
    capacity: usize,
    cos_threshold: f64,
    entries: VecDeque<Keyframe>,
}

impl KeyframeWindow {
    pub fn new(capacity: usize, theta_view_deg: f64) -> Self {
        KeyframeWindow {
            capacity,
            cos_threshold: theta_view_deg.to_radians().cos(),
            entries: VecDeque::with_capacity(capacity + 1),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.entries.len() >= self.capacity
    }

    pub fn entries(&self) -> impl Iterator<Item = &Keyframe> {
        self.entries.iter()
    }

    pub fn frame_ids(&self) -> Vec<usize> {
        self.entries.iter().map(|k| k.frame_id).collect()
    }

    pub fn should_admit(&self, view: &Vec3) -> bool {
        match self.entries.front() {
            None => true,
            Some(last) => view.dot(&last.view) < self.cos_threshold + ADMIT_SLACK,
        }
    }

    /// `max_{j evictable, j != i} vᵢ·vⱼ` for an evictable position `i`.
    pub fn eviction_score(&self, i: usize) -> f64 {
        let vi = self.entries[i].view;
        (2..self.entries.len())
            .filter(|&j| j != i)
            .map(|j| vi.dot(&self.entries[j].view))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Position of the frame to drop: the highest score, the oldest on ties.
    pub fn eviction_candidate(&self) -> Result<usize> {
        if self.capacity < 3 || self.entries.len() < 3 {
            return Err(Error::NothingEvictable(self.capacity));
        }
        let mut best = 2;
        let mut best_score = self.eviction_score(2);
        for i in 3..self.entries.len() {
            let s = self.eviction_score(i);
            if s >= best_score {
                best = i;
                best_score = s;
            }
        }
        Ok(best)
    }

    pub fn ingest(&mut self, frame_id: usize, view: Vec3) -> Result<IngestOutcome> {
        if !self.should_admit(&view) {
            return Ok(IngestOutcome {
                admitted: false,
                evicted: None,
            });
        }
        self.entries.push_front(Keyframe { frame_id, view });
        let mut evicted = None;
        if self.entries.len() > self.capacity {
            let i = match self.eviction_candidate() {
                Ok(i) => i,
                Err(e) => {
                    self.entries.pop_front();
                    return Err(e);
                }
            };
            evicted = self.entries.remove(i);
        }
        Ok(IngestOutcome {
            admitted: true,
            evicted,
        })
    }
}
