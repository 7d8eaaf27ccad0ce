//! Slippery gridworld generators.
//!
//! Cells are numbered row-major; the start is the top-left corner and the
//! goal the bottom-right one. Every free cell offers eight actions: a normal
//! and a best-effort (BE) move in each of the four directions. A normal move
//! slips (stays put) with probability exactly `p`; a BE move slips with some
//! probability in `[p - q_max, p]`. Moving into an obstacle resets to the
//! start; moving off the grid stays put. Each step costs 1 until the goal,
//! which is absorbing and free.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    IntervalSet, ModelMeta, Policy, PolytopeSet, Rmdp, RmdpParts, Sense, UncertaintySet,
};

/// Number of action slots per state.
pub const GRID_ACTIONS: usize = 8;
/// Direction order: up, right, down, left.
const DIRECTIONS: [(i64, i64); 4] = [(0, -1), (1, 0), (0, 1), (-1, 0)];
const MAX_RESAMPLES: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Independent slip interval per BE action.
    Imdp,
    /// One slip improvement shared by all BE actions of a state.
    Srect,
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "imdp" => Ok(Variant::Imdp),
            "srect" => Ok(Variant::Srect),
            other => Err(Error::Config(format!("unknown variant `{other}` (expected imdp or srect)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridworldConfig {
    pub width: usize,
    pub height: usize,
    pub obstacles: usize,
    /// Probability that a state declares its BE actions before their twins.
    pub nu: f64,
    pub p: f64,
    pub q_max: f64,
    pub seed: u64,
    pub variant: Variant,
    pub gamma: f64,
}

impl Default for GridworldConfig {
    fn default() -> Self {
        GridworldConfig {
            width: 10,
            height: 10,
            obstacles: 10,
            nu: 0.5,
            p: 0.25,
            q_max: 0.1,
            seed: 0,
            variant: Variant::Srect,
            gamma: 0.99,
        }
    }
}

impl GridworldConfig {
    /// Square grid with `states` cells and 10% obstacles.
    pub fn square(states: usize) -> Result<Self> {
        let side = (states as f64).sqrt().round() as usize;
        if side * side != states || side == 0 {
            return Err(Error::Config(format!("gridworld size {states} is not a perfect square")));
        }
        Ok(GridworldConfig {
            width: side,
            height: side,
            obstacles: (states as f64 * 0.1).round() as usize,
            ..GridworldConfig::default()
        })
    }

    pub fn validate(&self) -> Result<()> {
        let cells = self.width * self.height;
        if cells < 2 {
            return Err(Error::Config("gridworld needs at least two cells".into()));
        }
        if self.obstacles > cells - 2 {
            return Err(Error::Config(format!("{} obstacles do not fit in {cells} cells", self.obstacles)));
        }
        if !(0.0..=1.0).contains(&self.nu) {
            return Err(Error::Config(format!("nu {} outside [0, 1]", self.nu)));
        }
        if !(0.0 <= self.q_max && self.q_max <= self.p && self.p < 1.0) {
            return Err(Error::Config(format!(
                "need 0 <= q_max <= p < 1, got q_max={} p={}",
                self.q_max, self.p
            )));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config(format!("discount {} outside (0, 1)", self.gamma)));
        }
        Ok(())
    }
}

struct Layout {
    blocked: Vec<bool>,
}

fn reachable(w: usize, h: usize, blocked: &[bool], from: usize, to: usize) -> bool {
    let mut seen = vec![false; w * h];
    let mut stack = vec![from];
    seen[from] = true;
    while let Some(c) = stack.pop() {
        if c == to {
            return true;
        }
        let (x, y) = ((c % w) as i64, (c / w) as i64);
        for (dx, dy) in DIRECTIONS {
            let (nx, ny) = (x + dx, y + dy);
            if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                continue;
            }
            let n = ny as usize * w + nx as usize;
            if !blocked[n] && !seen[n] {
                seen[n] = true;
                stack.push(n);
            }
        }
    }
    false
}

fn place_obstacles(cfg: &GridworldConfig, rng: &mut ChaCha8Rng) -> Result<Layout> {
    let cells = cfg.width * cfg.height;
    let (start, goal) = (0, cells - 1);
    for _ in 0..MAX_RESAMPLES {
        let mut blocked = vec![false; cells];
        // Indices 1..cells-1 exclude both start and goal.
        for i in sample(rng, cells - 2, cfg.obstacles).into_iter() {
            blocked[i + 1] = true;
        }
        if reachable(cfg.width, cfg.height, &blocked, start, goal) {
            return Ok(Layout { blocked });
        }
    }
    Err(Error::Config(format!("unreachable goal after {MAX_RESAMPLES} resamples")))
}

/// Target of moving in direction `d` from cell `c`.
fn target(cfg: &GridworldConfig, layout: &Layout, c: usize, d: usize) -> usize {
    let (x, y) = ((c % cfg.width) as i64, (c / cfg.width) as i64);
    let (nx, ny) = (x + DIRECTIONS[d].0, y + DIRECTIONS[d].1);
    if nx < 0 || ny < 0 || nx >= cfg.width as i64 || ny >= cfg.height as i64 {
        return c;
    }
    let n = ny as usize * cfg.width + nx as usize;
    if layout.blocked[n] {
        0
    } else {
        n
    }
}

pub fn gen_gridworld(cfg: &GridworldConfig) -> Result<Rmdp> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let layout = place_obstacles(cfg, &mut rng)?;
    let n = cfg.width * cfg.height;
    let (start, goal) = (0, n - 1);

    let mut rewards = Vec::with_capacity(n);
    let mut enabled = Vec::with_capacity(n);
    let mut be_actions = Vec::with_capacity(n);
    let mut uncertainty = Vec::with_capacity(n);
    for c in 0..n {
        // The coin is drawn for every cell so the stream does not depend on the layout.
        let be_first = rng.random::<f64>() < cfg.nu;
        if c == goal || layout.blocked[c] {
            rewards.push(vec![0.0; GRID_ACTIONS]);
            let mut en = vec![false; GRID_ACTIONS];
            en[0] = true;
            enabled.push(en);
            be_actions.push(vec![false; GRID_ACTIONS]);
            let mut row = vec![0.0; n];
            row[c] = 1.0;
            uncertainty.push(UncertaintySet::Interval(IntervalSet {
                lower: vec![row.clone(); GRID_ACTIONS],
                upper: vec![row; GRID_ACTIONS],
            }));
            continue;
        }
        rewards.push(vec![1.0; GRID_ACTIONS]);
        enabled.push(vec![true; GRID_ACTIONS]);
        let slots: Vec<(usize, bool)> = (0..4)
            .flat_map(|d| if be_first { [(d, true), (d, false)] } else { [(d, false), (d, true)] })
            .collect();
        be_actions.push(slots.iter().map(|&(_, be)| be).collect());
        let targets: Vec<usize> = slots.iter().map(|&(d, _)| target(cfg, &layout, c, d)).collect();
        uncertainty.push(match cfg.variant {
            Variant::Imdp => imdp_state(cfg, n, c, &slots, &targets),
            Variant::Srect => srect_state(cfg, c, &slots, &targets),
        });
    }
    let mut initial = vec![0.0; n];
    initial[start] = 1.0;
    let obstacles = (0..n).filter(|&c| layout.blocked[c]).collect();
    Rmdp::new(RmdpParts {
        n_states: n,
        n_actions: GRID_ACTIONS,
        gamma: cfg.gamma,
        sense: Sense::Minimize,
        initial,
        rewards,
        enabled: Some(enabled),
        uncertainty,
        meta: Some(ModelMeta {
            be_actions,
            width: Some(cfg.width),
            height: Some(cfg.height),
            start,
            goal,
            obstacles,
        }),
    })
}

fn imdp_state(cfg: &GridworldConfig, n: usize, c: usize, slots: &[(usize, bool)], targets: &[usize]) -> UncertaintySet {
    let mut lower = Vec::with_capacity(slots.len());
    let mut upper = Vec::with_capacity(slots.len());
    for (&(_, be), &t) in slots.iter().zip(targets) {
        let mut lo = vec![0.0; n];
        let mut hi = vec![0.0; n];
        if t == c {
            lo[c] = 1.0;
            hi[c] = 1.0;
        } else if be {
            lo[c] = cfg.p - cfg.q_max;
            hi[c] = cfg.p;
            lo[t] = 1.0 - cfg.p;
            hi[t] = 1.0 - cfg.p + cfg.q_max;
        } else {
            lo[c] = cfg.p;
            hi[c] = cfg.p;
            lo[t] = 1.0 - cfg.p;
            hi[t] = 1.0 - cfg.p;
        }
        lower.push(lo);
        upper.push(hi);
    }
    UncertaintySet::Interval(IntervalSet { lower, upper })
}

/// One polytope per state: normal moves pin the slip at `p`; every BE move
/// with a real target shares a single slip probability in `[p - q_max, p]`.
fn srect_state(cfg: &GridworldConfig, c: usize, slots: &[(usize, bool)], targets: &[usize]) -> UncertaintySet {
    let support: Vec<Vec<usize>> = targets
        .iter()
        .map(|&t| {
            let mut s = vec![c, t];
            s.sort_unstable();
            s.dedup();
            s
        })
        .collect();
    let mut offsets = vec![0];
    for s in &support {
        offsets.push(offsets.last().unwrap() + s.len());
    }
    let n_vars = *offsets.last().unwrap();
    // Column of the self-loop entry of slot `k`, if the slot can actually move.
    let self_col = |k: usize| -> Option<usize> {
        (support[k].len() == 2).then(|| offsets[k] + support[k].iter().position(|&s| s == c).unwrap())
    };
    let unit = |col: usize, sign: f64| {
        let mut r = vec![0.0; n_vars];
        r[col] = sign;
        r
    };
    let mut a = Vec::new();
    let mut b = Vec::new();
    let mut shared: Option<usize> = None;
    for (k, &(_, be)) in slots.iter().enumerate() {
        let Some(col) = self_col(k) else { continue };
        if be {
            match shared {
                None => {
                    shared = Some(col);
                    a.push(unit(col, 1.0));
                    b.push(cfg.p);
                    a.push(unit(col, -1.0));
                    b.push(-(cfg.p - cfg.q_max));
                }
                Some(first) => {
                    let mut r = unit(col, 1.0);
                    r[first] = -1.0;
                    a.push(r.iter().map(|x| -x).collect());
                    a.push(r);
                    b.push(0.0);
                    b.push(0.0);
                }
            }
        } else {
            a.push(unit(col, 1.0));
            b.push(cfg.p);
            a.push(unit(col, -1.0));
            b.push(-cfg.p);
        }
    }
    UncertaintySet::Polytope(PolytopeSet { a, b, support: Some(support) })
}

/// Percentage of decision states whose action mass lies on BE-tagged actions.
///
/// Decision states are those with at least one BE-tagged action.
pub fn be_action_fraction(m: &Rmdp, pi: &Policy) -> Result<f64> {
    let meta = m.meta().ok_or_else(|| Error::Validation("model carries no BE action tags".into()))?;
    m.check_policy(pi)?;
    let mut decisions = 0usize;
    let mut mass = 0.0;
    for s in 0..m.n_states() {
        let tags = &meta.be_actions[s];
        if !tags.iter().any(|&t| t) {
            continue;
        }
        decisions += 1;
        mass += pi.at(s).iter().zip(tags).filter(|(_, &t)| t).map(|(p, _)| p).sum::<f64>();
    }
    if decisions == 0 {
        return Err(Error::Validation("model has no BE-tagged decision states".into()));
    }
    Ok(100.0 * mass / decisions as f64)
}
