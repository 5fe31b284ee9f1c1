//! Synthetic inertial-signal fixture in the raw UCI HAR directory layout.
//!
//! For environments without the real recordings, this writes the same file
//! tree the loader expects (`train`/`test` partitions, `Inertial Signals`
//! channel files, `y_*.txt`, `subject_*.txt`) filled with seeded synthetic
//! windows. The class geometry mirrors what projections of the real dataset
//! show: the three walking activities share one oscillatory family and trade
//! examples at their boundaries, sitting and standing are low-energy with a
//! faint tremor in the same band, and lying sits far from everything else.
//! Each mobile class carries a hard subpopulation drawn from the shared
//! boundary region, which keeps cross-entropy pressure alive when a model is
//! fine-tuned on one class at a time.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use crate::dataset::{NUM_CHANNELS, NUM_CLASSES, WINDOW_LEN};
use crate::rng::Rng;

/// Per-class example counts of the real dataset.
pub const PAPER_COUNTS: [usize; NUM_CLASSES] = [1722, 1544, 1406, 1777, 1906, 1944];

/// Fraction of each class written to the `train` partition (the loader merges
/// the partitions again, so this only shapes the file layout).
const TRAIN_FRACTION: f64 = 0.7;

/// Fixed per-channel phase offsets, shared by all classes.
const CHANNEL_PHASE: [f64; NUM_CHANNELS] = [0.0, 0.25, 0.5, 0.125, 0.375, 0.625];

struct Profile {
    /// Gait fundamental, in cycles per window.
    gait_cycles: f64,
    gait_amp: f64,
    /// Second-harmonic strength relative to the fundamental.
    harm_scale: f64,
    base_mix: [f64; NUM_CHANNELS],
    harm_mix: [f64; NUM_CHANNELS],
    slow_cycles: f64,
    slow_amp: f64,
    slow_mix: [f64; NUM_CHANNELS],
    offset: [f64; NUM_CHANNELS],
    noise: f64,
    /// Fraction of examples drawn from the ambiguous boundary band.
    hard_fraction: f64,
    /// Frequency range of those boundary examples.
    hard_cycles: (f64, f64),
    /// Amplitude multiplier for boundary examples.
    hard_amp: f64,
}

/// Oscillation mix shared by the walking family (and leaked, at low
/// amplitude, into the static postures so the classes compete for the same
/// convolution filters).
const GAIT_BASE: [f64; NUM_CHANNELS] = [1.0, 0.55, 0.35, 0.8, 0.5, 0.3];
const GAIT_HARM: [f64; NUM_CHANNELS] = [0.4, 0.7, 0.25, 0.3, 0.45, 0.2];

/// Boundary band all three walking classes spill into.
const WALK_HARD_BAND: (f64, f64) = (3.8, 5.2);

fn profile(class: usize) -> Profile {
    match class {
        // Walking
        0 => Profile {
            gait_cycles: 4.55,
            gait_amp: 1.0,
            harm_scale: 0.5,
            base_mix: GAIT_BASE,
            harm_mix: GAIT_HARM,
            slow_cycles: 0.9,
            slow_amp: 0.2,
            slow_mix: [0.5, 0.5, 0.5, 0.3, 0.3, 0.3],
            offset: [0.0; 6],
            noise: 0.8,
            hard_fraction: 0.2,
            hard_cycles: WALK_HARD_BAND,
            hard_amp: 1.05,
        },
        // Walking upstairs
        1 => Profile {
            gait_cycles: 4.0,
            gait_amp: 1.1,
            harm_scale: 0.62,
            base_mix: GAIT_BASE,
            harm_mix: GAIT_HARM,
            slow_cycles: 0.9,
            slow_amp: 0.2,
            slow_mix: [0.5, 0.5, 0.5, 0.3, 0.3, 0.3],
            offset: [0.0; 6],
            noise: 0.8,
            hard_fraction: 0.2,
            hard_cycles: WALK_HARD_BAND,
            hard_amp: 1.0,
        },
        // Walking downstairs
        2 => Profile {
            gait_cycles: 5.05,
            gait_amp: 1.2,
            harm_scale: 0.4,
            base_mix: GAIT_BASE,
            harm_mix: GAIT_HARM,
            slow_cycles: 0.9,
            slow_amp: 0.2,
            slow_mix: [0.5, 0.5, 0.5, 0.3, 0.3, 0.3],
            offset: [0.0; 6],
            noise: 0.8,
            hard_fraction: 0.2,
            hard_cycles: WALK_HARD_BAND,
            hard_amp: 0.95,
        },
        // Sitting: low-energy tremor in the lower walking band plus slow
        // sway; the hard tail reaches walker-like energy.
        3 => Profile {
            gait_cycles: 4.1,
            gait_amp: 0.55,
            harm_scale: 0.35,
            base_mix: GAIT_BASE,
            harm_mix: GAIT_HARM,
            slow_cycles: 0.7,
            slow_amp: 0.12,
            slow_mix: [0.3, 0.8, 0.4, 0.2, 0.5, 0.3],
            offset: [0.02, -0.02, 0.02, 0.0, 0.0, 0.0],
            noise: 0.3,
            hard_fraction: 0.2,
            hard_cycles: (3.9, 4.4),
            hard_amp: 1.5,
        },
        // Standing: like sitting with a different sway mix and band energy.
        4 => Profile {
            gait_cycles: 4.25,
            gait_amp: 0.65,
            harm_scale: 0.3,
            base_mix: GAIT_BASE,
            harm_mix: GAIT_HARM,
            slow_cycles: 1.1,
            slow_amp: 0.16,
            slow_mix: [0.7, 0.3, 0.5, 0.4, 0.2, 0.5],
            offset: [-0.02, 0.02, 0.01, 0.0, 0.0, 0.0],
            noise: 0.35,
            hard_fraction: 0.2,
            hard_cycles: (3.9, 4.5),
            hard_amp: 1.4,
        },
        // Lying: large constant posture offsets, far from everything else.
        5 => Profile {
            gait_cycles: 4.5,
            gait_amp: 0.02,
            harm_scale: 0.3,
            base_mix: GAIT_BASE,
            harm_mix: GAIT_HARM,
            slow_cycles: 0.5,
            slow_amp: 0.1,
            slow_mix: [0.2, 0.2, 0.2, 0.6, 0.4, 0.5],
            offset: [-0.55, 0.42, 0.5, 0.02, -0.02, 0.01],
            noise: 0.04,
            hard_fraction: 0.0,
            hard_cycles: (4.5, 4.5),
            hard_amp: 1.0,
        },
        _ => unreachable!("class id out of range"),
    }
}

fn gen_window(p: &Profile, rng: &mut Rng) -> Vec<f64> {
    let tau = std::f64::consts::TAU;
    let phase = rng.next_f64();
    let hard = rng.next_f64() < p.hard_fraction;
    let (freq, amp) = if hard {
        let (lo, hi) = p.hard_cycles;
        (
            lo + (hi - lo) * rng.next_f64(),
            p.gait_amp * p.hard_amp * (1.0 + 0.3 * (rng.next_f64() - 0.5)),
        )
    } else {
        (
            p.gait_cycles * (1.0 + 0.12 * (rng.next_f64() - 0.5)),
            p.gait_amp * (1.0 + 0.4 * (rng.next_f64() - 0.5)),
        )
    };
    let slow_phase = rng.next_f64();

    let mut values = vec![0.0; WINDOW_LEN * NUM_CHANNELS];
    for t in 0..WINDOW_LEN {
        let x = t as f64 / WINDOW_LEN as f64;
        for c in 0..NUM_CHANNELS {
            let g1 = (tau * (freq * x + phase + CHANNEL_PHASE[c])).sin();
            let g2 = (tau * (2.0 * freq * x + 2.0 * phase + 0.17 + CHANNEL_PHASE[c])).sin();
            let s = (tau * (p.slow_cycles * x + slow_phase + 0.5 * CHANNEL_PHASE[c])).sin();
            values[t * NUM_CHANNELS + c] = p.offset[c]
                + amp * (p.base_mix[c] * g1 + p.harm_scale * p.harm_mix[c] * g2)
                + p.slow_amp * p.slow_mix[c] * s
                + p.noise * rng.next_normal();
        }
    }
    values
}

/// Write a complete raw layout under `root` with the given per-class counts.
///
/// Generation is deterministic in `(seed, counts)`: example `i` of class `c`
/// is drawn from the derivation chain `seed -> c -> i`.
pub fn generate_uci_layout(
    root: &Path,
    counts: [usize; NUM_CLASSES],
    seed: u64,
) -> io::Result<()> {
    let rng = Rng::new(seed);

    // (class, windows) generated per class, then distributed to partitions.
    let mut per_class: Vec<Vec<Vec<f64>>> = Vec::with_capacity(NUM_CLASSES);
    for (c, &n) in counts.iter().enumerate() {
        let class_rng = rng.derive(c as u32);
        let prof = profile(c);
        let mut windows = Vec::with_capacity(n);
        for i in 0..n {
            let mut wrng = class_rng.derive(i as u32);
            windows.push(gen_window(&prof, &mut wrng));
        }
        per_class.push(windows);
    }

    for partition in ["train", "test"] {
        let part_dir = root.join(partition);
        let signals_dir = part_dir.join("Inertial Signals");
        fs::create_dir_all(&signals_dir)?;

        // Rows of this partition, in (class, example) order.
        let mut rows: Vec<(usize, usize)> = Vec::new();
        for (c, windows) in per_class.iter().enumerate() {
            let cut = (windows.len() as f64 * TRAIN_FRACTION).floor() as usize;
            let range = if partition == "train" { 0..cut } else { cut..windows.len() };
            rows.extend(range.map(|i| (c, i)));
        }

        const CHANNEL_NAMES: [&str; NUM_CHANNELS] = [
            "body_acc_x",
            "body_acc_y",
            "body_acc_z",
            "body_gyro_x",
            "body_gyro_y",
            "body_gyro_z",
        ];
        for (ch, name) in CHANNEL_NAMES.iter().enumerate() {
            let path = signals_dir.join(format!("{name}_{partition}.txt"));
            let mut out = BufWriter::new(fs::File::create(path)?);
            for &(c, i) in &rows {
                let w = &per_class[c][i];
                for t in 0..WINDOW_LEN {
                    if t > 0 {
                        out.write_all(b" ")?;
                    }
                    write!(out, "{:.7e}", w[t * NUM_CHANNELS + ch])?;
                }
                out.write_all(b"\n")?;
            }
            out.flush()?;
        }

        let mut y = BufWriter::new(fs::File::create(part_dir.join(format!("y_{partition}.txt")))?);
        for &(c, _) in &rows {
            writeln!(y, "{}", c + 1)?;
        }
        y.flush()?;

        let mut subj = BufWriter::new(fs::File::create(
            part_dir.join(format!("subject_{partition}.txt")),
        )?);
        for &(c, i) in &rows {
            writeln!(subj, "{}", (c * 7 + i) % 30 + 1)?;
        }
        subj.flush()?;
    }
    Ok(())
}
