//! Which keys each query may attend to.
//!
//! The sequence is cut into disjoint window segments of `w` tokens. In the
//! bidirectional case a query attends its whole home segment plus `w/2` tokens
//! on either side (`2w` slots). In the causal case it attends the `w` tokens
//! left of its home segment and the non-future part of the home segment.
//! Slots that fall outside the sequence are zero padding and are masked.

use crate::config::{LsConfig, Mode};
use crate::error::{Error, Result};

/// Start of the window segment containing `t`.
pub fn home_start(t: usize, w: usize) -> usize {
    (t / w) * w
}

/// The `2w` bidirectional key slots shared by every query of the segment that
/// starts at `block_start`.
pub(crate) fn bidirectional_slots(block_start: usize, w: usize, n: usize) -> Vec<Option<usize>> {
    let first = block_start as isize - (w / 2) as isize;
    (0..2 * w as isize)
        .map(|k| real_position(first + k, n))
        .collect()
}

/// The `2w` causal key slots of the segment starting at `block_start`: `w`
/// positions to its left followed by the segment itself. Per-query causal
/// masking is applied on top.
pub(crate) fn causal_slots(block_start: usize, w: usize, n: usize) -> Vec<Option<usize>> {
    let first = block_start as isize - w as isize;
    (0..2 * w as isize)
        .map(|k| real_position(first + k, n))
        .collect()
}

fn real_position(p: isize, n: usize) -> Option<usize> {
    (p >= 0 && (p as usize) < n).then_some(p as usize)
}

fn check_query(t: usize, cfg: &LsConfig, mode: Mode) -> Result<()> {
    if cfg.mode != mode {
        return Err(Error::config(format!(
            "span requested for {mode} mode on a {} config",
            cfg.mode
        )));
    }
    if t >= cfg.n {
        return Err(Error::config(format!(
            "query {t} outside sequence of length {}",
            cfg.n
        )));
    }
    if cfg.w == 0 {
        return Err(Error::config("no local window when w = 0"));
    }
    Ok(())
}

/// Bidirectional attention span of one query.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionSpan {
    pub query: usize,
    /// `2w` slots in increasing position order; `None` is zero padding.
    pub keys: Vec<Option<usize>>,
}

impl AttentionSpan {
    pub fn real_keys(&self) -> Vec<usize> {
        self.keys.iter().flatten().copied().collect()
    }

    pub fn padding(&self) -> usize {
        self.keys.iter().filter(|k| k.is_none()).count()
    }

    pub fn attendable(&self) -> Vec<bool> {
        self.keys.iter().map(Option::is_some).collect()
    }
}

pub fn window_span(t: usize, cfg: &LsConfig) -> Result<AttentionSpan> {
    check_query(t, cfg, Mode::Bidirectional)?;
    Ok(AttentionSpan {
        query: t,
        keys: bidirectional_slots(home_start(t, cfg.w), cfg.w, cfg.n),
    })
}

/// Causal span of one query: its window keys and how many projected
/// segments it sees.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CausalSpan {
    pub query: usize,
    /// Positions from `w` before the home segment up to the query itself;
    /// `None` marks padding before the sequence start.
    pub window: Vec<Option<usize>>,
    /// `⌊t/l⌋`: projected segments strictly before the query's segment.
    pub segments: usize,
}

impl CausalSpan {
    pub fn real_keys(&self) -> Vec<usize> {
        self.window.iter().flatten().copied().collect()
    }

    pub fn padding(&self) -> usize {
        self.window.iter().filter(|k| k.is_none()).count()
    }

    /// Real window keys plus `r` projected tokens per visible segment.
    pub fn attendable_count(&self, r: usize) -> usize {
        self.real_keys().len() + r * self.segments
    }
}

pub fn causal_window_span(t: usize, cfg: &LsConfig) -> Result<CausalSpan> {
    check_query(t, cfg, Mode::Causal)?;
    let hs = home_start(t, cfg.w);
    let first = hs as isize - cfg.w as isize;
    let window = (first..=t as isize)
        .map(|p| real_position(p, cfg.n))
        .collect();
    Ok(CausalSpan {
        query: t,
        window,
        segments: t / cfg.l,
    })
}
