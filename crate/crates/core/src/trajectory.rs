//! Coarse-grained trajectories: residue centers plus sequence, one record per frame.
//!
//! The on-disk format is line oriented:
//!
//! ```text
//! PTRAJ v1 n=<residues> frames=<frames>
//! <sequence as 1-letter codes>
//! FRAME <t>
//! <x> <y> <z>      (n lines)
//! ...
//! ```

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng::SeedTree;

/// The 20 standard amino-acid codes, in the fixed one-hot column order.
pub const ALPHABET: [char; 20] = [
    'A', 'C', 'D', 'E', 'F', 'G', 'H', 'I', 'K', 'L', 'M', 'N', 'P', 'Q', 'R', 'S', 'T', 'V', 'W',
    'Y',
];

/// Residue spacing used by the synthetic generators (Cα–Cα distance, Å).
pub const BOND_LENGTH: f64 = 3.8;

/// Minimum residue count; pseudo-dihedrals need four consecutive centers.
pub const MIN_RESIDUES: usize = 4;

/// One standard amino acid, stored as its column in [`ALPHABET`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AminoAcid(u8);

impl AminoAcid {
    pub fn from_code(code: char) -> Option<Self> {
        ALPHABET.iter().position(|&c| c == code).map(|i| AminoAcid(i as u8))
    }

    pub fn from_index(index: usize) -> Option<Self> {
        (index < ALPHABET.len()).then_some(AminoAcid(index as u8))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn code(self) -> char {
        ALPHABET[self.0 as usize]
    }
}

pub fn parse_sequence(s: &str) -> Result<Vec<AminoAcid>> {
    s.chars()
        .enumerate()
        .map(|(i, c)| {
            AminoAcid::from_code(c)
                .ok_or_else(|| Error::arg(format!("unknown amino acid '{c}' at position {i}")))
        })
        .collect()
}

pub fn sequence_string(seq: &[AminoAcid]) -> String {
    seq.iter().map(|a| a.code()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryFrame {
    pub t: u64,
    pub coords: Vec<[f64; 3]>,
    pub sequence: Vec<AminoAcid>,
}

impl TrajectoryFrame {
    pub fn new(t: u64, coords: Vec<[f64; 3]>, sequence: Vec<AminoAcid>) -> Result<Self> {
        if coords.len() < MIN_RESIDUES {
            return Err(Error::arg(format!(
                "frame needs at least {MIN_RESIDUES} residues, got {}",
                coords.len()
            )));
        }
        if coords.len() != sequence.len() {
            return Err(Error::arg(format!(
                "{} coordinates but {} sequence entries",
                coords.len(),
                sequence.len()
            )));
        }
        if coords.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::arg("non-finite coordinate"));
        }
        Ok(Self { t, coords, sequence })
    }

    pub fn n(&self) -> usize {
        self.coords.len()
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        dist(&self.coords[i], &self.coords[j])
    }
}

pub(crate) fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub name: String,
    pub frames: Vec<TrajectoryFrame>,
}

impl Trajectory {
    pub fn new(name: impl Into<String>, frames: Vec<TrajectoryFrame>) -> Result<Self> {
        if frames.len() < 2 {
            return Err(Error::arg("a trajectory needs at least 2 frames"));
        }
        let first = &frames[0];
        for w in frames.windows(2) {
            if w[1].t <= w[0].t {
                return Err(Error::arg(format!(
                    "frame times must increase ({} then {})",
                    w[0].t, w[1].t
                )));
            }
        }
        for f in &frames[1..] {
            if f.n() != first.n() {
                return Err(Error::arg("residue count differs between frames"));
            }
            if f.sequence != first.sequence {
                return Err(Error::arg("sequence differs between frames"));
            }
        }
        Ok(Self { name: name.into(), frames })
    }

    pub fn n_residues(&self) -> usize {
        self.frames[0].n()
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn sequence(&self) -> &[AminoAcid] {
        &self.frames[0].sequence
    }

    /// Frames at the given positions, as a new trajectory.
    pub fn subset(&self, idx: &[usize]) -> Result<Trajectory> {
        Trajectory::new(self.name.clone(), idx.iter().map(|&i| self.frames[i].clone()).collect())
    }

    /// Copy with one residue's amino acid replaced in every frame.
    pub fn with_substitution(&self, residue: usize, aa: AminoAcid) -> Result<Trajectory> {
        if residue >= self.n_residues() {
            return Err(Error::arg(format!("residue {residue} out of range")));
        }
        let frames = self
            .frames
            .iter()
            .map(|f| {
                let mut f = f.clone();
                f.sequence[residue] = aa;
                f
            })
            .collect();
        Ok(Trajectory { name: format!("{}-{}{}", self.name, residue, aa.code()), frames })
    }

    /// Per-residue positional variance (sum over x, y, z) across frames.
    pub fn residue_variance(&self) -> Vec<f64> {
        let n = self.n_residues();
        let m = self.frames.len() as f64;
        (0..n)
            .map(|i| {
                let mut mean = [0.0; 3];
                for f in &self.frames {
                    for d in 0..3 {
                        mean[d] += f.coords[i][d] / m;
                    }
                }
                self.frames
                    .iter()
                    .map(|f| (0..3).map(|d| (f.coords[i][d] - mean[d]).powi(2)).sum::<f64>())
                    .sum::<f64>()
                    / m
            })
            .collect()
    }
}

pub fn parse_trajectory(path: impl AsRef<Path>) -> Result<Trajectory> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("trajectory").to_string();
    parse_trajectory_str(&text, &name)
}

fn header_field(tok: Option<&str>, key: &str, line: usize) -> Result<usize> {
    tok.and_then(|t| t.strip_prefix(key))
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::parse(line, format!("malformed header: expected {key}<int>")))
}

pub fn parse_trajectory_str(text: &str, name: &str) -> Result<Trajectory> {
    // leading `#` lines are a provenance header, not data
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).skip_while(|(_, l)| l.starts_with('#'));

    let (ln, header) = lines.next().ok_or_else(|| Error::parse(1, "empty file"))?;
    let mut toks = header.split_whitespace();
    if toks.next() != Some("PTRAJ") || toks.next() != Some("v1") {
        return Err(Error::parse(ln, "malformed header: expected 'PTRAJ v1'"));
    }
    let n = header_field(toks.next(), "n=", ln)?;
    let n_frames = header_field(toks.next(), "frames=", ln)?;
    if toks.next().is_some() {
        return Err(Error::parse(ln, "malformed header: trailing tokens"));
    }
    if n < MIN_RESIDUES {
        return Err(Error::parse(ln, format!("n must be at least {MIN_RESIDUES}")));
    }

    let (ln, seq_line) = lines.next().ok_or_else(|| Error::parse(2, "missing sequence line"))?;
    let sequence = seq_line
        .chars()
        .map(|c| {
            AminoAcid::from_code(c)
                .ok_or_else(|| Error::parse(ln, format!("unknown amino acid '{c}'")))
        })
        .collect::<Result<Vec<_>>>()?;
    if sequence.len() != n {
        return Err(Error::parse(
            ln,
            format!("residue count mismatch at line {ln}: sequence has {} codes, header says {n}", sequence.len()),
        ));
    }

    let mut frames = Vec::with_capacity(n_frames);
    let mut pending: Option<(usize, u64, Vec<[f64; 3]>)> = None;
    let mut last_ln = ln;

    let finish = |p: (usize, u64, Vec<[f64; 3]>), at: usize, frames: &mut Vec<TrajectoryFrame>| {
        let (start, t, coords) = p;
        if coords.len() != n {
            return Err(Error::parse(
                at,
                format!(
                    "residue count mismatch at line {at}: frame at line {start} has {} residues, header says {n}",
                    coords.len()
                ),
            ));
        }
        if let Some(prev) = frames.last() {
            if t <= prev.t {
                return Err(Error::parse(start, format!("frame time {t} does not increase")));
            }
        }
        frames.push(TrajectoryFrame { t, coords, sequence: sequence.clone() });
        Ok(())
    };

    for (ln, line) in lines {
        last_ln = ln;
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("FRAME") {
            if let Some(p) = pending.take() {
                finish(p, ln, &mut frames)?;
            }
            let t: u64 = rest
                .trim()
                .parse()
                .map_err(|_| Error::parse(ln, "malformed FRAME line: expected 'FRAME <int>'"))?;
            pending = Some((ln, t, Vec::with_capacity(n)));
            continue;
        }
        let Some((_, _, coords)) = pending.as_mut() else {
            return Err(Error::parse(ln, "coordinates before first FRAME line"));
        };
        if coords.len() == n {
            return Err(Error::parse(
                ln,
                format!("residue count mismatch at line {ln}: more than {n} coordinate lines"),
            ));
        }
        let vals: Vec<&str> = line.split_whitespace().collect();
        if vals.len() != 3 {
            return Err(Error::parse(ln, "expected three coordinates"));
        }
        let mut xyz = [0.0; 3];
        for (d, v) in vals.iter().enumerate() {
            let x: f64 = v
                .parse()
                .map_err(|_| Error::parse(ln, format!("invalid coordinate '{v}'")))?;
            if !x.is_finite() {
                return Err(Error::parse(ln, "non-finite coordinate"));
            }
            xyz[d] = x;
        }
        coords.push(xyz);
    }
    if let Some(p) = pending.take() {
        finish(p, last_ln + 1, &mut frames)?;
    }
    if frames.len() != n_frames {
        return Err(Error::parse(
            last_ln,
            format!("header declares {n_frames} frames, found {}", frames.len()),
        ));
    }
    Trajectory::new(name, frames).map_err(|e| Error::parse(last_ln, e.to_string()))
}

pub fn format_trajectory(traj: &Trajectory) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "PTRAJ v1 n={} frames={}", traj.n_residues(), traj.len());
    let _ = writeln!(out, "{}", sequence_string(traj.sequence()));
    for f in &traj.frames {
        let _ = writeln!(out, "FRAME {}", f.t);
        for c in &f.coords {
            let _ = writeln!(out, "{} {} {}", c[0], c[1], c[2]);
        }
    }
    out
}

pub fn write_trajectory(traj: &Trajectory, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, format_trajectory(traj))?;
    Ok(())
}

/// Hinge opening angle at frame `t` of an `n_frames`-long trajectory.
pub fn hinge_angle(t: u64, n_frames: usize, theta_min: f64, theta_max: f64) -> f64 {
    let phase = 2.0 * PI * t as f64 / n_frames as f64;
    theta_min + (theta_max - theta_min) * (1.0 + phase.sin()) / 2.0
}

/// Bead positions for two straight arms of `n_per_arm` beads meeting at the
/// origin with opening angle `theta`. Order: first arm tip to pivot, then
/// second arm pivot to tip.
pub fn hinge_coords(n_per_arm: usize, theta: f64) -> Vec<[f64; 3]> {
    let half = theta / 2.0;
    let ua = [half.cos(), half.sin(), 0.0];
    let ub = [half.cos(), -half.sin(), 0.0];
    let mut out = Vec::with_capacity(2 * n_per_arm);
    for k in (1..=n_per_arm).rev() {
        let r = k as f64 * BOND_LENGTH;
        out.push([r * ua[0], r * ua[1], r * ua[2]]);
    }
    for k in 1..=n_per_arm {
        let r = k as f64 * BOND_LENGTH;
        out.push([r * ub[0], r * ub[1], r * ub[2]]);
    }
    out
}

fn round_robin_sequence(n: usize) -> Vec<AminoAcid> {
    (0..n).map(|i| AminoAcid(i as u8 % 20)).collect()
}

fn jitter(coords: &mut [[f64; 3]], sigma: f64, rng: &mut crate::rng::Rng) {
    if sigma == 0.0 {
        return;
    }
    let normal = Normal::new(0.0, sigma).expect("sigma checked positive");
    for c in coords.iter_mut() {
        for v in c.iter_mut() {
            *v += normal.sample(rng);
        }
    }
}

/// Two rigid arms whose opening angle follows one sine period over the run.
pub fn synth_hinge(
    n_per_arm: usize,
    n_frames: usize,
    theta_min: f64,
    theta_max: f64,
    noise_sigma: f64,
    seed: u64,
) -> Result<Trajectory> {
    if n_per_arm < 2 {
        return Err(Error::arg("n_per_arm must be at least 2"));
    }
    if n_frames < 2 {
        return Err(Error::arg("n_frames must be at least 2"));
    }
    if !(0.0 < theta_min && theta_min < theta_max && theta_max < PI) {
        return Err(Error::arg("need 0 < theta_min < theta_max < pi"));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::arg("noise_sigma must be finite and non-negative"));
    }
    let mut rng = SeedTree::new(seed).rng("hinge/noise");
    let sequence = round_robin_sequence(2 * n_per_arm);
    let frames = (0..n_frames as u64)
        .map(|t| {
            let theta = hinge_angle(t, n_frames, theta_min, theta_max);
            let mut coords = hinge_coords(n_per_arm, theta);
            jitter(&mut coords, noise_sigma, &mut rng);
            TrajectoryFrame { t, coords, sequence: sequence.clone() }
        })
        .collect();
    Trajectory::new("hinge", frames)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HingeState {
    Open,
    Closed,
}

impl HingeState {
    pub fn angle(self) -> f64 {
        match self {
            HingeState::Open => TWO_STATE_OPEN,
            HingeState::Closed => TWO_STATE_CLOSED,
        }
    }

    fn flip(self) -> Self {
        match self {
            HingeState::Open => HingeState::Closed,
            HingeState::Closed => HingeState::Open,
        }
    }
}

pub const TWO_STATE_OPEN: f64 = 2.4;
pub const TWO_STATE_CLOSED: f64 = 0.8;
pub const TWO_STATE_NOISE: f64 = 0.3;

/// Markov switching between an open and a closed hinge, starting open.
/// Returns the generator's state labels along with the trajectory.
pub fn synth_two_state_labeled(
    n: usize,
    n_frames: usize,
    switch_prob: f64,
    seed: u64,
) -> Result<(Trajectory, Vec<HingeState>)> {
    if !(switch_prob > 0.0 && switch_prob < 1.0) {
        return Err(Error::arg("switch_prob must lie in (0, 1)"));
    }
    if n < MIN_RESIDUES || n % 2 != 0 {
        return Err(Error::arg("n must be even and at least 4"));
    }
    if n_frames < 2 {
        return Err(Error::arg("n_frames must be at least 2"));
    }
    let tree = SeedTree::new(seed);
    let mut switch_rng = tree.rng("two_state/switch");
    let mut noise_rng = tree.rng("two_state/noise");
    let sequence = round_robin_sequence(n);
    let mut state = HingeState::Open;
    let mut states = Vec::with_capacity(n_frames);
    let mut frames = Vec::with_capacity(n_frames);
    for t in 0..n_frames as u64 {
        if t > 0 && switch_rng.random::<f64>() < switch_prob {
            state = state.flip();
        }
        let mut coords = hinge_coords(n / 2, state.angle());
        jitter(&mut coords, TWO_STATE_NOISE, &mut noise_rng);
        states.push(state);
        frames.push(TrajectoryFrame { t, coords, sequence: sequence.clone() });
    }
    Ok((Trajectory::new("two_state", frames)?, states))
}

pub fn synth_two_state(n: usize, n_frames: usize, switch_prob: f64, seed: u64) -> Result<Trajectory> {
    synth_two_state_labeled(n, n_frames, switch_prob, seed).map(|(t, _)| t)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "PTRAJ v1 n=4 frames=2\nACDE\nFRAME 0\n0 0 0\n1 0 0\n1 1 0\n2 1 0\nFRAME 1\n0 0 0\n1 0 0\n1 1 0\n2 1 0.5\n";

    #[test]
    fn minimal_file_parses() {
        let t = parse_trajectory_str(MINIMAL, "m").unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.n_residues(), 4);
        assert_eq!(sequence_string(t.sequence()), "ACDE");
        assert_eq!(t.frames[1].coords[3], [2.0, 1.0, 0.5]);
    }

    #[test]
    fn leading_comment_header_is_skipped() {
        let t = parse_trajectory_str(&format!("# pscape 0.1.0\n# seed: 3\n{MINIMAL}"), "m").unwrap();
        assert_eq!(t, parse_trajectory_str(MINIMAL, "m").unwrap());
        let bad = format!("# c\n{}", MINIMAL.replace("ACDE", "ACDX"));
        assert!(parse_trajectory_str(&bad, "m").unwrap_err().to_string().contains("line 3"));
    }

    #[test]
    fn extra_residue_is_rejected_with_line() {
        let bad = "PTRAJ v1 n=4 frames=2\nACDE\nFRAME 0\n0 0 0\n1 0 0\n1 1 0\n2 1 0\nFRAME 1\n0 0 0\n1 0 0\n1 1 0\n2 1 0\n3 1 0\n";
        let err = parse_trajectory_str(bad, "m").unwrap_err().to_string();
        assert!(err.contains("residue count mismatch at line 13"), "{err}");
    }

    #[test]
    fn short_frame_is_rejected() {
        let bad = "PTRAJ v1 n=4 frames=2\nACDE\nFRAME 0\n0 0 0\n1 0 0\n1 1 0\nFRAME 1\n0 0 0\n1 0 0\n1 1 0\n2 1 0\n";
        let err = parse_trajectory_str(bad, "m").unwrap_err().to_string();
        assert!(err.contains("residue count mismatch"), "{err}");
    }

    #[test]
    fn unknown_code_is_rejected() {
        let bad = MINIMAL.replace("ACDE", "ACXE");
        let err = parse_trajectory_str(&bad, "m").unwrap_err().to_string();
        assert!(err.contains("unknown amino acid"), "{err}");
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn malformed_header_and_nonfinite_rejected() {
        let bad = MINIMAL.replace("PTRAJ v1", "PTRAJ v2");
        assert!(parse_trajectory_str(&bad, "m").unwrap_err().to_string().contains("header"));
        let bad = MINIMAL.replace("2 1 0.5", "2 1 NaN");
        let err = parse_trajectory_str(&bad, "m").unwrap_err().to_string();
        assert!(err.contains("line 12") && err.contains("non-finite"), "{err}");
        let bad = MINIMAL.replace("frames=2", "frames=3");
        assert!(parse_trajectory_str(&bad, "m").is_err());
        let bad = MINIMAL.replace("FRAME 1", "FRAME 0");
        assert!(parse_trajectory_str(&bad, "m").is_err());
    }

    #[test]
    fn format_round_trips() {
        let t = parse_trajectory_str(MINIMAL, "m").unwrap();
        assert_eq!(format_trajectory(&t), MINIMAL);
        let h = synth_hinge(3, 5, 0.5, 2.5, 0.1, 3).unwrap();
        let again = parse_trajectory_str(&format_trajectory(&h), "hinge").unwrap();
        assert_eq!(again, h);
    }

    #[test]
    fn noiseless_closed_state_hits_theta_min() {
        let (lo, hi) = (0.4, 2.2);
        let h = synth_hinge(4, 8, lo, hi, 0.0, 1).unwrap();
        // sin(2*pi*6/8) = -1
        let f = &h.frames[6];
        let tip_a = f.coords[0];
        let tip_b = f.coords[7];
        let dot = tip_a[0] * tip_b[0] + tip_a[1] * tip_b[1] + tip_a[2] * tip_b[2];
        let na = dist(&tip_a, &[0.0; 3]);
        let nb = dist(&tip_b, &[0.0; 3]);
        let angle = (dot / (na * nb)).clamp(-1.0, 1.0).acos();
        assert!((angle - lo).abs() < 1e-9, "{angle}");
        assert_eq!(hinge_angle(6, 8, lo, hi), lo);
    }

    #[test]
    fn hinge_is_deterministic() {
        let a = synth_hinge(5, 40, 0.5, 2.5, 0.3, 11).unwrap();
        let b = synth_hinge(5, 40, 0.5, 2.5, 0.3, 11).unwrap();
        assert_eq!(format_trajectory(&a), format_trajectory(&b));
        let c = synth_hinge(5, 40, 0.5, 2.5, 0.3, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn tip_distance_follows_law_of_cosines() {
        let (lo, hi) = (0.3, 2.9);
        let h = synth_hinge(5, 300, lo, hi, 0.0, 0).unwrap();
        let arm = 5.0 * BOND_LENGTH;
        let mut pairs: Vec<(f64, f64)> = h
            .frames
            .iter()
            .map(|f| {
                let theta = hinge_angle(f.t, 300, lo, hi);
                let d = f.distance(0, 9);
                assert!((d - 2.0 * arm * (theta / 2.0).sin()).abs() < 1e-9);
                (theta, d)
            })
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        assert!(pairs.windows(2).all(|w| w[1].1 >= w[0].1 - 1e-12));
    }

    #[test]
    fn hinge_argument_errors() {
        assert!(synth_hinge(5, 10, 2.0, 1.0, 0.0, 0).is_err());
        assert!(synth_hinge(5, 10, 0.0, 1.0, 0.0, 0).is_err());
        assert!(synth_hinge(5, 10, 0.5, PI, 0.0, 0).is_err());
        assert!(synth_hinge(1, 10, 0.5, 1.0, 0.0, 0).is_err());
    }

    #[test]
    fn two_state_limits_and_occupancy() {
        let (_, states) = synth_two_state_labeled(10, 500, 1e-12, 4).unwrap();
        assert!(states.iter().all(|&s| s == HingeState::Open));

        let (_, states) = synth_two_state_labeled(6, 10_000, 0.5, 9).unwrap();
        let open = states.iter().filter(|&&s| s == HingeState::Open).count() as f64 / 10_000.0;
        assert!((0.45..=0.55).contains(&open), "{open}");

        let (a, sa) = synth_two_state_labeled(8, 200, 0.05, 3).unwrap();
        let (b, sb) = synth_two_state_labeled(8, 200, 0.05, 3).unwrap();
        assert_eq!(sa, sb);
        assert_eq!(a, b);

        assert!(synth_two_state(8, 10, 0.0, 0).is_err());
        assert!(synth_two_state(8, 10, 1.0, 0).is_err());
    }

    #[test]
    fn residue_variance_grows_toward_tips() {
        let h = synth_hinge(5, 100, 0.5, 2.5, 0.0, 0).unwrap();
        let v = h.residue_variance();
        assert!(v[0] > v[4]);
        assert!(v[9] > v[5]);
    }
}
