//! One-dimensional key-collection navigation.
//!
//! State layout: `[location, keyA, keyB, keyC, keyD, doorBit1, doorBit2]`.
//! Actions: `0 moveLeft, 1 moveRight, 2..=5 pickKeyA..D, 6 finish`.

use super::{KeyNavVariant, Terminal};
use crate::error::{Error, Result};
use crate::numcore::Rng;

pub const STATE_DIM: usize = 7;
pub const NUM_ACTIONS: usize = 7;
pub const HORIZON: usize = 40;
pub const GAMMA: f64 = 0.999;

pub const MOVE_LEFT: usize = 0;
pub const MOVE_RIGHT: usize = 1;
pub const PICK_A: usize = 2;
pub const FINISH: usize = 6;

pub const STEP_SIZE: f64 = 0.075;
pub const STEP_NOISE: f64 = 0.01;

/// Key segments for A, B, C, D.
pub const KEY_SEGMENTS: [(f64, f64); 4] = [(0.0, 0.1), (0.2, 0.3), (0.4, 0.5), (0.6, 0.7)];
pub const DOOR_SEGMENT: (f64, f64) = (0.9, 1.0);

pub const KEY_NAMES: [char; 4] = ['A', 'B', 'C', 'D'];

/// Required-key bitmasks (bit k = key k) for door types 1..=4.
const STANDARD_DOORS: [u8; 4] = [0b0011, 0b0101, 0b1010, 0b1100];

fn in_segment(x: f64, seg: (f64, f64)) -> bool {
    x >= seg.0 && x <= seg.1
}

/// Door type index `0..4` from the two door bits (Type1 = 00 … Type4 = 11).
pub fn door_index(state: &[f64]) -> usize {
    (state[5] as usize) * 2 + state[6] as usize
}

pub fn required_keys(variant: KeyNavVariant, door: usize) -> u8 {
    match variant {
        KeyNavVariant::Standard => STANDARD_DOORS[door],
        KeyNavVariant::AllDoorsAB => 0b0011,
        KeyNavVariant::AllDoorsA => 0b0001,
    }
}

pub fn held_keys(state: &[f64]) -> u8 {
    (0..4).fold(0u8, |m, k| if state[1 + k] > 0.5 { m | (1 << k) } else { m })
}

/// Keys the door still needs that the agent does not hold.
pub fn missing_keys(variant: KeyNavVariant, state: &[f64]) -> u8 {
    required_keys(variant, door_index(state)) & !held_keys(state)
}

pub fn validate(state: &[f64]) -> Result<()> {
    let bad = |detail: String| Error::InvalidState {
        env: "multikeynav".into(),
        detail,
    };
    if state.len() != STATE_DIM {
        return Err(bad(format!("expected {STATE_DIM} components, got {}", state.len())));
    }
    if !(0.0..=1.0).contains(&state[0]) {
        return Err(bad(format!("location {} outside [0,1]", state[0])));
    }
    if state[1..].iter().any(|&b| b != 0.0 && b != 1.0) {
        return Err(bad("key and door components must be 0 or 1".into()));
    }
    Ok(())
}

pub fn sample(rng: &mut Rng) -> Vec<f64> {
    let mut s = vec![0.0; STATE_DIM];
    s[0] = rng.unit();
    for v in s.iter_mut().skip(1) {
        *v = if rng.bernoulli(0.5) { 1.0 } else { 0.0 };
    }
    s
}

/// Applies one action; `rng` supplies the move noise.
pub fn step(variant: KeyNavVariant, state: &[f64], action: usize, rng: &mut Rng) -> Result<(Vec<f64>, Terminal)> {
    let mut next = state.to_vec();
    let terminal = match action {
        MOVE_LEFT | MOVE_RIGHT => {
            let delta = STEP_SIZE + rng.uniform(-STEP_NOISE, STEP_NOISE);
            let dir = if action == MOVE_LEFT { -1.0 } else { 1.0 };
            next[0] = (state[0] + dir * delta).clamp(0.0, 1.0);
            Terminal::Alive
        }
        a @ PICK_A..=5 => {
            let k = a - PICK_A;
            if in_segment(state[0], KEY_SEGMENTS[k]) {
                next[1 + k] = 1.0;
                Terminal::Alive
            } else {
                Terminal::Crashed
            }
        }
        FINISH => {
            if in_segment(state[0], DOOR_SEGMENT) && missing_keys(variant, state) == 0 {
                Terminal::Solved
            } else {
                Terminal::Crashed
            }
        }
        other => {
            return Err(Error::InvalidAction {
                env: "multikeynav".into(),
                detail: format!("action {other} outside 0..{NUM_ACTIONS}"),
            })
        }
    };
    Ok((next, terminal))
}

/// Scripted strategy: collect the leftmost missing key, repeat, then walk to
/// the door and finish.
pub fn expert(variant: KeyNavVariant, state: &[f64]) -> Result<usize> {
    validate(state).map_err(|e| Error::Expert(e.to_string()))?;
    let loc = state[0];
    let missing = missing_keys(variant, state);
    let target = if missing != 0 {
        let k = missing.trailing_zeros() as usize;
        if in_segment(loc, KEY_SEGMENTS[k]) {
            return Ok(PICK_A + k);
        }
        KEY_SEGMENTS[k]
    } else {
        if in_segment(loc, DOOR_SEGMENT) {
            return Ok(FINISH);
        }
        DOOR_SEGMENT
    };
    Ok(if loc < target.0 { MOVE_RIGHT } else { MOVE_LEFT })
}
