//! SkillGrid: a deterministic synthetic tabletop world with compositional
//! language instructions and a scripted expert.
//!
//! The effector moves on the unit square; a drawer, a faucet and two blocks
//! each expose an interaction zone. Instructions name one subtask or an
//! ordered pair of subtasks on distinct objects, rendered in one of five
//! vocabulary splits so language generalization is measurable.

use crate::error::{Error, Result};
use crate::rng::Rng;

pub const STATE_DIM: usize = 6;
pub const ACTION_DIM: usize = 3;

/// Interaction zone radius (inclusive).
pub const ZONE_RADIUS: f64 = 0.15;
/// Per-step gain for both effector motion and object actuation.
pub const STEP_GAIN: f64 = 0.2;
/// Proportional gain of the expert's approach controller.
const APPROACH_GAIN: f64 = 5.0;
/// Std-dev of the optional expert action noise used at dataset generation.
pub const EXPERT_NOISE_SIGMA: f64 = 0.02;
/// Episode horizon granted per subtask.
pub const STEPS_PER_SUBTASK: usize = 40;

/// Full observable world state; `to_vec` order is the observation layout.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WorldState {
    pub effector_x: f64,
    pub effector_y: f64,
    /// Drawer openness in [0, 1].
    pub drawer: f64,
    /// Faucet angle in [-1, 1].
    pub faucet: f64,
    pub block1_x: f64,
    pub block2_x: f64,
}

impl WorldState {
    pub fn to_vec(self) -> [f64; STATE_DIM] {
        [
            self.effector_x,
            self.effector_y,
            self.drawer,
            self.faucet,
            self.block1_x,
            self.block2_x,
        ]
    }

    pub fn from_vec(v: [f64; STATE_DIM]) -> Self {
        WorldState {
            effector_x: v[0],
            effector_y: v[1],
            drawer: v[2],
            faucet: v[3],
            block1_x: v[4],
            block2_x: v[5],
        }
    }
}

/// Continuous action; components are clipped to [-1, 1] on construction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Action {
    pub dx: f64,
    pub dy: f64,
    /// Actuation applied to the nearest zone's object when in range.
    pub u: f64,
}

impl Action {
    pub fn new(dx: f64, dy: f64, u: f64) -> Self {
        Action {
            dx: dx.clamp(-1.0, 1.0),
            dy: dy.clamp(-1.0, 1.0),
            u: u.clamp(-1.0, 1.0),
        }
    }

    pub fn to_vec(self) -> [f64; ACTION_DIM] {
        [self.dx, self.dy, self.u]
    }

    pub fn from_vec(v: [f64; ACTION_DIM]) -> Self {
        Action::new(v[0], v[1], v[2])
    }
}

/// Objects on the table, in zone-priority order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Object {
    Drawer,
    Faucet,
    Block1,
    Block2,
}

impl Object {
    pub const ALL: [Object; 4] = [Object::Drawer, Object::Faucet, Object::Block1, Object::Block2];

    pub fn zone_center(self, s: &WorldState) -> (f64, f64) {
        match self {
            Object::Drawer => (-0.5, -0.5),
            Object::Faucet => (0.5, -0.5),
            Object::Block1 => (s.block1_x, 0.3),
            Object::Block2 => (s.block2_x, 0.7),
        }
    }
}

/// The eight task primitives.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Subtask {
    OpenDrawer,
    CloseDrawer,
    FaucetRight,
    FaucetLeft,
    Block1Left,
    Block1Right,
    Block2Left,
    Block2Right,
}

impl Subtask {
    pub const ALL: [Subtask; 8] = [
        Subtask::OpenDrawer,
        Subtask::CloseDrawer,
        Subtask::FaucetRight,
        Subtask::FaucetLeft,
        Subtask::Block1Left,
        Subtask::Block1Right,
        Subtask::Block2Left,
        Subtask::Block2Right,
    ];

    pub fn index(self) -> usize {
        Subtask::ALL.iter().position(|&s| s == self).unwrap()
    }

    pub fn object(self) -> Object {
        match self {
            Subtask::OpenDrawer | Subtask::CloseDrawer => Object::Drawer,
            Subtask::FaucetRight | Subtask::FaucetLeft => Object::Faucet,
            Subtask::Block1Left | Subtask::Block1Right => Object::Block1,
            Subtask::Block2Left | Subtask::Block2Right => Object::Block2,
        }
    }

    /// Direction the expert actuates the object coordinate.
    fn target_sign(self) -> f64 {
        match self {
            Subtask::OpenDrawer | Subtask::FaucetRight | Subtask::Block1Right | Subtask::Block2Right => 1.0,
            Subtask::CloseDrawer | Subtask::FaucetLeft | Subtask::Block1Left | Subtask::Block2Left => -1.0,
        }
    }
}

/// Success predicate for one subtask (thresholds inclusive).
pub fn subtask_done(state: &WorldState, subtask: Subtask) -> bool {
    match subtask {
        Subtask::OpenDrawer => state.drawer >= 0.9,
        Subtask::CloseDrawer => state.drawer <= 0.1,
        Subtask::FaucetRight => state.faucet >= 0.8,
        Subtask::FaucetLeft => state.faucet <= -0.8,
        Subtask::Block1Left => state.block1_x <= -0.5,
        Subtask::Block1Right => state.block1_x >= 0.5,
        Subtask::Block2Left => state.block2_x <= -0.5,
        Subtask::Block2Right => state.block2_x >= 0.5,
    }
}

/// Instruction vocabulary splits, mirroring seen/unseen/human evaluation
/// settings.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Seen,
    UnseenVerb,
    UnseenNoun,
    UnseenBoth,
    Human,
}

impl Split {
    pub const ALL: [Split; 5] = [
        Split::Seen,
        Split::UnseenVerb,
        Split::UnseenNoun,
        Split::UnseenBoth,
        Split::Human,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Seen => "seen",
            Split::UnseenVerb => "unseen_verb",
            Split::UnseenNoun => "unseen_noun",
            Split::UnseenBoth => "unseen_both",
            Split::Human => "human",
        }
    }

    pub fn parse(s: &str) -> Result<Split> {
        Split::ALL
            .iter()
            .copied()
            .find(|sp| sp.as_str() == s)
            .ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "unknown split '{s}' (valid: seen, unseen_verb, unseen_noun, unseen_both, human)"
                ))
            })
    }
}

/// A language-labelled task: one subtask or an ordered pair on distinct
/// objects, plus its rendered text and a stable dense template id.
#[derive(Clone, Debug, PartialEq)]
pub struct Instruction {
    pub subtasks: Vec<Subtask>,
    pub text: String,
    pub template_id: usize,
    pub split: Split,
}

impl Instruction {
    pub fn horizon(&self) -> usize {
        STEPS_PER_SUBTASK * self.subtasks.len()
    }
}

/// All ordered subtask pairs on distinct objects, in enumeration order.
fn all_pairs() -> Vec<(Subtask, Subtask)> {
    let mut pairs = Vec::with_capacity(48);
    for &a in &Subtask::ALL {
        for &b in &Subtask::ALL {
            if a.object() != b.object() {
                pairs.push((a, b));
            }
        }
    }
    pairs
}

/// Every template in id order: the 8 singles, then the 48 ordered pairs.
pub fn all_templates() -> Vec<Vec<Subtask>> {
    let mut out: Vec<Vec<Subtask>> = Subtask::ALL.iter().map(|&s| vec![s]).collect();
    out.extend(all_pairs().into_iter().map(|(a, b)| vec![a, b]));
    out
}

pub fn template_count() -> usize {
    8 + 48
}

/// Dense injective id of an ordered subtask list.
pub fn template_id(subtasks: &[Subtask]) -> usize {
    match subtasks {
        [s] => s.index(),
        [a, b] => {
            let pos = all_pairs()
                .iter()
                .position(|&(x, y)| x == *a && y == *b)
                .expect("pair on distinct objects");
            8 + pos
        }
        _ => panic!("instructions hold 1 or 2 subtasks"),
    }
}

fn verb(subtask: Subtask, unseen: bool) -> &'static str {
    match subtask {
        Subtask::OpenDrawer => {
            if unseen {
                "pull"
            } else {
                "open"
            }
        }
        Subtask::CloseDrawer => {
            if unseen {
                "shut"
            } else {
                "close"
            }
        }
        Subtask::FaucetRight | Subtask::FaucetLeft => {
            if unseen {
                "rotate"
            } else {
                "turn"
            }
        }
        _ => {
            if unseen {
                "slide"
            } else {
                "move"
            }
        }
    }
}

fn noun(subtask: Subtask, unseen: bool) -> &'static str {
    match subtask.object() {
        Object::Drawer => {
            if unseen {
                "cabinet"
            } else {
                "drawer"
            }
        }
        Object::Faucet => {
            if unseen {
                "tap"
            } else {
                "faucet"
            }
        }
        Object::Block1 => {
            if unseen {
                "cube1"
            } else {
                "block1"
            }
        }
        Object::Block2 => {
            if unseen {
                "cube2"
            } else {
                "block2"
            }
        }
    }
}

fn direction(subtask: Subtask) -> Option<&'static str> {
    match subtask {
        Subtask::FaucetRight | Subtask::Block1Right | Subtask::Block2Right => Some("right"),
        Subtask::FaucetLeft | Subtask::Block1Left | Subtask::Block2Left => Some("left"),
        Subtask::OpenDrawer | Subtask::CloseDrawer => None,
    }
}

fn clause(subtask: Subtask, unseen_verb: bool, unseen_noun: bool) -> String {
    let v = verb(subtask, unseen_verb);
    let n = noun(subtask, unseen_noun);
    match direction(subtask) {
        Some(d) => format!("{v} {n} {d}"),
        None => format!("{v} {n}"),
    }
}

/// Render the instruction text for a subtask list under a split. The text is
/// a pure function of (subtasks, split).
pub fn render_text(subtasks: &[Subtask], split: Split) -> String {
    let (uv, un) = match split {
        Split::Seen | Split::Human => (false, false),
        Split::UnseenVerb => (true, false),
        Split::UnseenNoun => (false, true),
        Split::UnseenBoth => (true, true),
    };
    let clauses: Vec<String> = subtasks.iter().map(|&s| clause(s, uv, un)).collect();
    match split {
        Split::Human => match &clauses[..] {
            [c] => format!("please {c}"),
            [c1, c2] => format!("please {c1}, then also {c2}"),
            _ => unreachable!(),
        },
        _ => clauses.join(" and "),
    }
}

pub fn instruction_for(subtasks: Vec<Subtask>, split: Split) -> Instruction {
    let text = render_text(&subtasks, split);
    let template_id = template_id(&subtasks);
    Instruction {
        subtasks,
        text,
        template_id,
        split,
    }
}

/// Uniformly sample a task: one subtask with probability 1/2, otherwise an
/// ordered pair on distinct objects, then render per split.
pub fn sample_task(rng: &mut Rng, split: Split) -> Instruction {
    let subtasks = if rng.uniform() < 0.5 {
        vec![Subtask::ALL[rng.below(8)]]
    } else {
        let pairs = all_pairs();
        let (a, b) = pairs[rng.below(pairs.len())];
        vec![a, b]
    };
    instruction_for(subtasks, split)
}

/// Initial state for an instruction. Sampling ranges guarantee no goal
/// predicate holds at reset.
pub fn reset(rng: &mut Rng, instruction: &Instruction) -> WorldState {
    let wants_open = instruction.subtasks.contains(&Subtask::OpenDrawer);
    let wants_close = instruction.subtasks.contains(&Subtask::CloseDrawer);
    let drawer = if wants_open {
        rng.range(0.0, 0.5)
    } else if wants_close {
        rng.range(0.5, 1.0)
    } else {
        rng.range(0.2, 0.8)
    };
    let state = WorldState {
        effector_x: 0.0,
        effector_y: 0.0,
        drawer,
        faucet: rng.range(-0.4, 0.4),
        block1_x: rng.range(-0.3, 0.3),
        block2_x: rng.range(-0.3, 0.3),
    };
    debug_assert!(instruction.subtasks.iter().all(|&s| !subtask_done(&state, s)));
    state
}

/// Pure one-step dynamics: the effector moves first, then the nearest
/// in-range zone's object is actuated by `u` (ties resolved in
/// `Object::ALL` priority order).
pub fn step(state: &WorldState, action: &Action) -> WorldState {
    let mut next = *state;
    next.effector_x = (state.effector_x + STEP_GAIN * action.dx.clamp(-1.0, 1.0)).clamp(-1.0, 1.0);
    next.effector_y = (state.effector_y + STEP_GAIN * action.dy.clamp(-1.0, 1.0)).clamp(-1.0, 1.0);

    let mut nearest: Option<(Object, f64)> = None;
    for &obj in &Object::ALL {
        let (cx, cy) = obj.zone_center(state);
        let d2 = (next.effector_x - cx).powi(2) + (next.effector_y - cy).powi(2);
        if d2 <= ZONE_RADIUS * ZONE_RADIUS && nearest.map_or(true, |(_, best)| d2 < best) {
            nearest = Some((obj, d2));
        }
    }
    if let Some((obj, _)) = nearest {
        let du = STEP_GAIN * action.u.clamp(-1.0, 1.0);
        match obj {
            Object::Drawer => next.drawer = (state.drawer + du).clamp(0.0, 1.0),
            Object::Faucet => next.faucet = (state.faucet + du).clamp(-1.0, 1.0),
            Object::Block1 => next.block1_x = (state.block1_x + du).clamp(-1.0, 1.0),
            Object::Block2 => next.block2_x = (state.block2_x + du).clamp(-1.0, 1.0),
        }
    }
    next
}

/// Scripted expert targeting the first unlatched subtask: approach its zone
/// with a saturated proportional controller, then actuate toward the goal.
/// With `noise`, Gaussian perturbation (sigma 0.02) is added to every
/// component before clipping.
pub fn expert_action(
    state: &WorldState,
    instruction: &Instruction,
    latched: &[bool],
    noise: Option<&mut Rng>,
) -> Result<Action> {
    let target = instruction
        .subtasks
        .iter()
        .zip(latched)
        .find(|(_, &done)| !done)
        .map(|(&s, _)| s)
        .ok_or(Error::NoPendingSubtask)?;

    let (cx, cy) = target.object().zone_center(state);
    let dist2 = (state.effector_x - cx).powi(2) + (state.effector_y - cy).powi(2);
    let (mut dx, mut dy, mut u) = if dist2 > ZONE_RADIUS * ZONE_RADIUS {
        (
            (APPROACH_GAIN * (cx - state.effector_x)).clamp(-1.0, 1.0),
            (APPROACH_GAIN * (cy - state.effector_y)).clamp(-1.0, 1.0),
            0.0,
        )
    } else {
        (0.0, 0.0, target.target_sign())
    };
    if let Some(rng) = noise {
        dx += EXPERT_NOISE_SIGMA * rng.normal();
        dy += EXPERT_NOISE_SIGMA * rng.normal();
        u += EXPERT_NOISE_SIGMA * rng.normal();
    }
    Ok(Action::new(dx, dy, u))
}

/// Update latch flags in place against a new state; returns true when all
/// subtasks are latched.
pub fn update_latches(state: &WorldState, instruction: &Instruction, latched: &mut [bool]) -> bool {
    for (i, &s) in instruction.subtasks.iter().enumerate() {
        if !latched[i] && subtask_done(state, s) {
            latched[i] = true;
        }
    }
    latched.iter().all(|&l| l)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamKey;

    fn rng(seed: u64) -> Rng {
        StreamKey::root(seed).child("env-test").rng()
    }

    #[test]
    fn template_enumeration_counts() {
        // ordered pairs on distinct objects: 8 * 6; total 8 + 48
        let templates = all_templates();
        assert_eq!(templates.len(), 56);
        assert_eq!(templates.iter().filter(|t| t.len() == 2).count(), 48);
        // ids are dense and stable
        for (i, t) in templates.iter().enumerate() {
            assert_eq!(template_id(t), i);
        }
    }

    #[test]
    fn sample_task_is_deterministic_per_seed() {
        let a = sample_task(&mut rng(5), Split::Seen);
        let b = sample_task(&mut rng(5), Split::Seen);
        assert_eq!(a, b);
    }

    #[test]
    fn seen_split_uses_only_canonical_tokens() {
        let canonical = [
            "open", "close", "turn", "move", "drawer", "faucet", "block1", "block2", "left",
            "right", "and",
        ];
        let mut r = rng(1);
        for _ in 0..10_000 {
            let instr = sample_task(&mut r, Split::Seen);
            for tok in crate::embed::tokenize(&instr.text) {
                assert!(canonical.contains(&tok.as_str()), "token {tok} in {:?}", instr.text);
            }
        }
    }

    #[test]
    fn split_renderings_differ() {
        let subtasks = vec![Subtask::OpenDrawer, Subtask::FaucetRight];
        assert_eq!(render_text(&subtasks, Split::Seen), "open drawer and turn faucet right");
        assert_eq!(render_text(&subtasks, Split::UnseenVerb), "pull drawer and rotate faucet right");
        assert_eq!(render_text(&subtasks, Split::UnseenNoun), "open cabinet and turn tap right");
        assert_eq!(render_text(&subtasks, Split::UnseenBoth), "pull cabinet and rotate tap right");
        assert_eq!(
            render_text(&subtasks, Split::Human),
            "please open drawer, then also turn faucet right"
        );
    }

    #[test]
    fn reset_is_deterministic_and_goal_free() {
        let instr = instruction_for(vec![Subtask::OpenDrawer], Split::Seen);
        let a = reset(&mut rng(3), &instr);
        let b = reset(&mut rng(3), &instr);
        assert_eq!(a, b);
        assert!(a.drawer < 0.9);
    }

    #[test]
    fn thousand_resets_never_presatisfy_goals() {
        let mut r = rng(17);
        for template in all_templates() {
            let instr = instruction_for(template, Split::Seen);
            for _ in 0..1000 {
                let s = reset(&mut r, &instr);
                for &st in &instr.subtasks {
                    assert!(!subtask_done(&s, st), "{st:?} satisfied at reset {s:?}");
                }
            }
        }
    }

    #[test]
    fn zero_action_is_identity() {
        let s = WorldState {
            effector_x: 0.2,
            effector_y: -0.1,
            drawer: 0.4,
            faucet: 0.1,
            block1_x: 0.0,
            block2_x: -0.2,
        };
        assert_eq!(step(&s, &Action::new(0.0, 0.0, 0.0)), s);
    }

    #[test]
    fn actuation_at_drawer_handle() {
        let s = WorldState {
            effector_x: -0.5,
            effector_y: -0.5,
            drawer: 0.5,
            faucet: 0.0,
            block1_x: 0.0,
            block2_x: 0.0,
        };
        let next = step(&s, &Action::new(0.0, 0.0, 1.0));
        assert!((next.drawer - 0.7).abs() < 1e-15);
    }

    #[test]
    fn actuation_out_of_range_is_ignored() {
        // from reset geometry, no zone is within 0.15 of the origin
        let mut r = rng(23);
        for _ in 0..200 {
            let instr = sample_task(&mut r, Split::Seen);
            let s = reset(&mut r, &instr);
            for &obj in &Object::ALL {
                let (cx, cy) = obj.zone_center(&s);
                assert!(cx * cx + cy * cy > ZONE_RADIUS * ZONE_RADIUS);
            }
            let next = step(&s, &Action::new(0.0, 0.0, 1.0));
            assert_eq!(next, s);
        }
    }

    #[test]
    fn predicate_boundaries_are_inclusive() {
        let mut s = WorldState {
            effector_x: 0.0,
            effector_y: 0.0,
            drawer: 1.0,
            faucet: -0.79,
            block1_x: 0.0,
            block2_x: 0.0,
        };
        assert!(subtask_done(&s, Subtask::OpenDrawer));
        assert!(!subtask_done(&s, Subtask::FaucetLeft));
        s.drawer = 0.9;
        assert!(subtask_done(&s, Subtask::OpenDrawer));
    }

    #[test]
    fn range_safety_under_random_actions() {
        let mut r = rng(31);
        let instr = sample_task(&mut r, Split::Seen);
        let mut s = reset(&mut r, &instr);
        for _ in 0..500 {
            let a = Action::new(r.range(-2.0, 2.0), r.range(-2.0, 2.0), r.range(-2.0, 2.0));
            s = step(&s, &a);
            assert!(s.effector_x.abs() <= 1.0 && s.effector_y.abs() <= 1.0);
            assert!((0.0..=1.0).contains(&s.drawer));
            assert!(s.faucet.abs() <= 1.0);
            assert!(s.block1_x.abs() <= 1.0 && s.block2_x.abs() <= 1.0);
        }
    }

    #[test]
    fn expert_saturates_toward_far_zone() {
        let instr = instruction_for(vec![Subtask::FaucetRight], Split::Seen);
        let s = WorldState {
            effector_x: -1.0,
            effector_y: -0.5,
            drawer: 0.5,
            faucet: 0.0,
            block1_x: 0.0,
            block2_x: 0.0,
        };
        let a = expert_action(&s, &instr, &[false], None).unwrap();
        assert_eq!(a.dx, 1.0);
        assert_eq!(a.u, 0.0);
    }

    #[test]
    fn expert_actuates_inside_zone() {
        let instr = instruction_for(vec![Subtask::OpenDrawer], Split::Seen);
        let s = WorldState {
            effector_x: -0.5,
            effector_y: -0.5,
            drawer: 0.3,
            faucet: 0.0,
            block1_x: 0.0,
            block2_x: 0.0,
        };
        let a = expert_action(&s, &instr, &[false], None).unwrap();
        assert_eq!((a.dx, a.dy, a.u), (0.0, 0.0, 1.0));
    }

    #[test]
    fn expert_errors_when_everything_latched() {
        let instr = instruction_for(vec![Subtask::OpenDrawer], Split::Seen);
        let s = reset(&mut rng(2), &instr);
        let err = expert_action(&s, &instr, &[true], None).unwrap_err();
        assert!(matches!(err, Error::NoPendingSubtask));
    }

    #[test]
    fn noiseless_expert_completes_every_single_template_within_40_steps() {
        let mut r = rng(41);
        for &st in &Subtask::ALL {
            let instr = instruction_for(vec![st], Split::Seen);
            for _ in 0..1000 {
                let mut s = reset(&mut r, &instr);
                let mut latched = vec![false; 1];
                let mut done = false;
                for _ in 0..STEPS_PER_SUBTASK {
                    let a = expert_action(&s, &instr, &latched, None).unwrap();
                    s = step(&s, &a);
                    if update_latches(&s, &instr, &mut latched) {
                        done = true;
                        break;
                    }
                }
                assert!(done, "expert failed {st:?} from some reset");
            }
        }
    }
}
