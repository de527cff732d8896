//! Input triggers: a single trainable vector appended to (or placed into)
//! every input of a frozen classifier. Application rules keep the gradient
//! path open to the trigger values while the input itself stays data.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeId, Tape, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TriggerPosition {
    Prefix,
    Suffix,
}

impl Default for TriggerPosition {
    fn default() -> Self {
        TriggerPosition::Prefix
    }
}

/// Trigger kind plus the geometry needed to build it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TriggerGeometry {
    /// Perturbation added to every feature; keeps the input width.
    Additive { dim: usize },
    /// Extra feature block of `width` columns; original features unmodified.
    Concat { dim: usize, width: usize, position: TriggerPosition },
    /// Ring of `width` pixels around a `side`-sized image whose interior is
    /// the original image downscaled.
    Border { side: usize, width: usize },
    /// `patch x patch` block at `anchor` replacing the original pixels.
    Patch { side: usize, patch: usize, anchor: (usize, usize) },
    /// `slots` simplex-weighted mixtures over a frozen embedding table of
    /// `vocab` rows and `embed` columns, concatenated to the input.
    Soft { dim: usize, slots: usize, vocab: usize, embed: usize, position: TriggerPosition },
    /// Like `Soft` but emits one-hot rows (argmax) with a straight-through
    /// gradient.
    Hard { dim: usize, slots: usize, vocab: usize, embed: usize, position: TriggerPosition },
}

impl TriggerGeometry {
    /// Raw feature width this trigger applies to.
    pub fn input_width(&self) -> usize {
        match self {
            TriggerGeometry::Additive { dim }
            | TriggerGeometry::Concat { dim, .. }
            | TriggerGeometry::Soft { dim, .. }
            | TriggerGeometry::Hard { dim, .. } => *dim,
            TriggerGeometry::Border { side, .. } | TriggerGeometry::Patch { side, .. } => side * side,
        }
    }

    /// Width of a triggered input given the raw feature width.
    pub fn output_width(&self, input: usize) -> usize {
        match self {
            TriggerGeometry::Additive { .. } | TriggerGeometry::Border { .. } | TriggerGeometry::Patch { .. } => input,
            TriggerGeometry::Concat { width, .. } => input + width,
            TriggerGeometry::Soft { slots, embed, .. } | TriggerGeometry::Hard { slots, embed, .. } => {
                input + slots * embed
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            TriggerGeometry::Additive { dim } => dim > 0,
            TriggerGeometry::Concat { dim, width, .. } => dim > 0 && width > 0,
            TriggerGeometry::Border { side, width } => width > 0 && 2 * width < side,
            TriggerGeometry::Patch { side, patch, anchor } => {
                patch > 0 && anchor.0 + patch <= side && anchor.1 + patch <= side
            }
            TriggerGeometry::Soft { dim, slots, vocab, embed, .. }
            | TriggerGeometry::Hard { dim, slots, vocab, embed, .. } => {
                dim > 0 && slots > 0 && vocab > 0 && embed > 0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid trigger geometry: {self:?}")))
        }
    }
}

/// A trigger's trainable values together with its application rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trigger {
    pub geometry: TriggerGeometry,
    /// `delta` for value triggers; the stacked simplex rows `v` for
    /// soft/hard triggers.
    pub values: Tensor,
    /// Frozen embedding table for soft/hard triggers.
    pub embedding: Option<Tensor>,
}

/// Handles returned by [`Trigger::apply_on_tape`].
pub struct TriggerNodes {
    pub output: NodeId,
    /// The trainable leaf (delta or v).
    pub param: NodeId,
}

/// Zero deltas for value triggers; uniform simplex rows and a seeded frozen
/// embedding table for soft/hard triggers.
pub fn init_trigger(geometry: TriggerGeometry, seed: u64) -> Result<Trigger> {
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    geometry.validate()?;
    let (values, embedding) = match geometry {
        TriggerGeometry::Additive { dim } => (Tensor::zeros(vec![dim]), None),
        TriggerGeometry::Concat { width, .. } => (Tensor::zeros(vec![width]), None),
        TriggerGeometry::Border { side, width } => {
            (Tensor::zeros(vec![side * side - (side - 2 * width) * (side - 2 * width)]), None)
        }
        TriggerGeometry::Patch { patch, .. } => (Tensor::zeros(vec![patch * patch]), None),
        TriggerGeometry::Soft { slots, vocab, embed, .. } | TriggerGeometry::Hard { slots, vocab, embed, .. } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let scale = 1.0 / (embed as f64).sqrt();
            let table: Vec<f64> = (0..vocab * embed).map(|_| rng.gen_range(-scale..scale)).collect();
            let v = vec![1.0 / vocab as f64; slots * vocab];
            (
                Tensor::new(vec![slots, vocab], v)?,
                Some(Tensor::new(vec![vocab, embed], table)?),
            )
        }
    };
    Ok(Trigger { geometry, values, embedding })
}

impl Trigger {
    /// Replaces the trainable values; shape must match.
    pub fn set_values(&mut self, t: Tensor) -> Result<()> {
        if t.shape() != self.values.shape() {
            return Err(Error::shape(
                "trigger",
                format!("expected {:?}, got {:?}", self.values.shape(), t.shape()),
            ));
        }
        self.values = t;
        Ok(())
    }

    /// Brings the values back into their feasible set after an optimizer
    /// step: simplex rows for soft/hard triggers, [0, 1] pixels for image
    /// triggers, unconstrained otherwise.
    pub fn project(&mut self) {
        match self.geometry {
            TriggerGeometry::Soft { slots, vocab, .. } | TriggerGeometry::Hard { slots, vocab, .. } => {
                let mut vals = self.values.values().to_vec();
                for r in 0..slots {
                    let row = project_simplex(&vals[r * vocab..(r + 1) * vocab]);
                    vals[r * vocab..(r + 1) * vocab].copy_from_slice(&row);
                }
                self.values = Tensor::new(vec![slots, vocab], vals).unwrap();
            }
            TriggerGeometry::Border { .. } | TriggerGeometry::Patch { .. } => {
                let vals = self.values.values().iter().map(|v| v.clamp(0.0, 1.0)).collect();
                self.values = Tensor::new(self.values.shape().to_vec(), vals).unwrap();
            }
            TriggerGeometry::Additive { .. } | TriggerGeometry::Concat { .. } => {}
        }
    }

    /// Records the application `x -> m(x)` on a tape. `x` is a `[n, d]`
    /// node (images row-flattened); the returned `param` leaf is the only
    /// node the optimizer should update.
    pub fn apply_on_tape(&self, tape: &mut Tape, x: NodeId) -> Result<TriggerNodes> {
        let t = tape.value(x);
        if t.shape().len() != 2 {
            return Err(Error::shape("apply_trigger", format!("expected [n, d] input, got {:?}", t.shape())));
        }
        let (n, d) = (t.rows(), t.cols());
        match &self.geometry {
            TriggerGeometry::Additive { dim } => {
                if d != *dim {
                    return Err(Error::shape("apply_trigger", format!("additive trigger dim {dim} vs input width {d}")));
                }
                let param = tape.leaf(self.values.clone());
                let rows = tape.repeat_row(param, n)?;
                let out = tape.add(x, rows)?;
                Ok(TriggerNodes { output: out, param })
            }
            TriggerGeometry::Concat { dim, position, .. } => {
                if d != *dim {
                    return Err(Error::shape("apply_trigger", format!("concat trigger expects width {dim}, input has {d}")));
                }
                let param = tape.leaf(self.values.clone());
                let rows = tape.repeat_row(param, n)?;
                let out = match position {
                    TriggerPosition::Prefix => tape.concat(rows, x)?,
                    TriggerPosition::Suffix => tape.concat(x, rows)?,
                };
                Ok(TriggerNodes { output: out, param })
            }
            TriggerGeometry::Border { side, width } => {
                let s = *side;
                if d != s * s {
                    return Err(Error::shape("apply_trigger", format!("border trigger expects {}x{} images ({} values), input width {d}", s, s, s * s)));
                }
                let inner = s - 2 * width;
                // The interior is a pure function of the data, so it enters
                // the graph as a constant; only the ring needs gradients.
                let mut interior = vec![0.0; n * s * s];
                for r in 0..n {
                    let img = tape.value(x).row(r).to_vec();
                    let small = downscale_values(&img, s, inner)?;
                    for i in 0..inner {
                        for j in 0..inner {
                            interior[r * s * s + (i + width) * s + (j + width)] = small[i * inner + j];
                        }
                    }
                }
                let interior = tape.leaf(Tensor::new(vec![n, s * s], interior)?);
                let param = tape.leaf(self.values.clone());
                let ring = tape.scatter(param, s * s, border_indices(s, *width))?;
                let ring_rows = tape.repeat_row(ring, n)?;
                let out = tape.add(interior, ring_rows)?;
                Ok(TriggerNodes { output: out, param })
            }
            TriggerGeometry::Patch { side, patch, anchor } => {
                let s = *side;
                if d != s * s {
                    return Err(Error::shape("apply_trigger", format!("patch trigger expects {}x{} images ({} values), input width {d}", s, s, s * s)));
                }
                let indices = patch_indices(s, *patch, *anchor);
                let mut mask = vec![1.0; s * s];
                for &i in &indices {
                    mask[i] = 0.0;
                }
                let mask_full: Vec<f64> = std::iter::repeat(mask).take(n).flatten().collect();
                let mask = tape.leaf(Tensor::new(vec![n, s * s], mask_full)?);
                let kept = tape.mul(x, mask)?;
                let param = tape.leaf(self.values.clone());
                let placed = tape.scatter(param, s * s, indices)?;
                let placed_rows = tape.repeat_row(placed, n)?;
                let out = tape.add(kept, placed_rows)?;
                Ok(TriggerNodes { output: out, param })
            }
            TriggerGeometry::Soft { dim, slots, embed, position, .. }
            | TriggerGeometry::Hard { dim, slots, embed, position, .. } => {
                if d != *dim {
                    return Err(Error::shape("apply_trigger", format!("trigger expects input width {dim}, got {d}")));
                }
                let param = tape.leaf(self.values.clone());
                let weights = if matches!(self.geometry, TriggerGeometry::Hard { .. }) {
                    tape.straight_through_one_hot(param)
                } else {
                    param
                };
                let table = tape.leaf(self.embedding.clone().expect("soft/hard trigger carries an embedding"));
                let emitted = tape.matmul(weights, table)?;
                let flat = tape.reshape(emitted, vec![1, slots * embed])?;
                let rows = tape.repeat_row(flat, n)?;
                let out = match position {
                    TriggerPosition::Prefix => tape.concat(rows, x)?,
                    TriggerPosition::Suffix => tape.concat(x, rows)?,
                };
                Ok(TriggerNodes { output: out, param })
            }
        }
    }

    /// Pure application for evaluation.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let xn = tape.leaf(x.clone());
        let nodes = self.apply_on_tape(&mut tape, xn)?;
        Ok(tape.value(nodes.output).clone())
    }

    /// The emitted trigger block for soft/hard triggers (`slots * embed`
    /// values), or the delta itself otherwise.
    pub fn emitted(&self) -> Tensor {
        match &self.geometry {
            TriggerGeometry::Soft { slots, vocab, embed, .. } | TriggerGeometry::Hard { slots, vocab, embed, .. } => {
                let table = self.embedding.as_ref().unwrap();
                let hard = matches!(self.geometry, TriggerGeometry::Hard { .. });
                let mut out = vec![0.0; slots * embed];
                for s in 0..*slots {
                    let row = &self.values.values()[s * vocab..(s + 1) * vocab];
                    if hard {
                        let j = crate::autodiff::argmax_tie_lowest(row);
                        out[s * embed..(s + 1) * embed].copy_from_slice(table.row(j));
                    } else {
                        for (j, &w) in row.iter().enumerate() {
                            for e in 0..*embed {
                                out[s * embed + e] += w * table.values()[j * embed + e];
                            }
                        }
                    }
                }
                Tensor::vector(out)
            }
            _ => self.values.clone(),
        }
    }
}

/// Row-major pixel indices of the `width`-deep ring around a `side`-sized
/// image.
pub fn border_indices(side: usize, width: usize) -> Vec<usize> {
    let mut out = Vec::new();
    for i in 0..side {
        for j in 0..side {
            if i < width || i >= side - width || j < width || j >= side - width {
                out.push(i * side + j);
            }
        }
    }
    out
}

/// Row-major pixel indices of a `patch`-sized block at `anchor`.
pub fn patch_indices(side: usize, patch: usize, anchor: (usize, usize)) -> Vec<usize> {
    let mut out = Vec::with_capacity(patch * patch);
    for i in 0..patch {
        for j in 0..patch {
            out.push((anchor.0 + i) * side + (anchor.1 + j));
        }
    }
    out
}

fn downscale_values(image: &[f64], s: usize, t: usize) -> Result<Vec<f64>> {
    if t == 0 || t > s {
        return Err(Error::invalid(format!("downscale target {t} must be in 1..={s}")));
    }
    if image.len() != s * s {
        return Err(Error::shape("downscale", format!("expected {} values for a {s}x{s} image, got {}", s * s, image.len())));
    }
    if t == s {
        return Ok(image.to_vec());
    }
    let scale = s as f64 / t as f64;
    let mut out = vec![0.0; t * t];
    for oi in 0..t {
        let y0 = oi as f64 * scale;
        let y1 = (oi + 1) as f64 * scale;
        for oj in 0..t {
            let x0 = oj as f64 * scale;
            let x1 = (oj + 1) as f64 * scale;
            let mut acc = 0.0;
            let mut total = 0.0;
            let mut r = y0.floor() as usize;
            while (r as f64) < y1 {
                let hy = (y1.min((r + 1) as f64) - y0.max(r as f64)).max(0.0);
                let mut c = x0.floor() as usize;
                while (c as f64) < x1 {
                    let hx = (x1.min((c + 1) as f64) - x0.max(c as f64)).max(0.0);
                    acc += hy * hx * image[r * s + c];
                    total += hy * hx;
                    c += 1;
                }
                r += 1;
            }
            out[oi * t + oj] = acc / total;
        }
    }
    Ok(out)
}

/// Area-average pooling of a square image to `target x target`; fractional
/// source boxes are weighted by overlap.
pub fn downscale(image: &Tensor, target: usize) -> Result<Tensor> {
    let s = match image.shape() {
        [a, b] if a == b => *a,
        other => return Err(Error::shape("downscale", format!("expected a square image, got {other:?}"))),
    };
    let out = downscale_values(image.values(), s, target)?;
    Tensor::new(vec![target, target], out)
}

/// Euclidean projection onto the probability simplex. The shift `tau` with
/// `sum_i max(v_i - tau, 0) = 1` is bracketed by bisection (monotone in
/// `tau`), then snapped to the closed form over the resolved support so the
/// output sums to 1 at machine precision.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    assert!(!v.is_empty(), "cannot project an empty vector");
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut lo = min - 1.0;
    let mut hi = max;
    let mass = |tau: f64| v.iter().map(|&x| (x - tau).max(0.0)).sum::<f64>() - 1.0;
    let mut it = 0;
    while hi - lo > 1e-10 && it < 200 {
        let mid = 0.5 * (lo + hi);
        if mass(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        it += 1;
    }
    let tau = 0.5 * (lo + hi);
    let support: Vec<f64> = v.iter().cloned().filter(|&x| x > tau).collect();
    let tau = if support.is_empty() {
        // Degenerate bracket; keep the largest coordinate.
        max - 1.0
    } else {
        (support.iter().sum::<f64>() - 1.0) / support.len() as f64
    };
    v.iter().map(|&x| (x - tau).max(0.0)).collect()
}

/// One-hot at the argmax; ties break to the lowest index.
pub fn straight_through_emit(v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    out[crate::autodiff::argmax_tie_lowest(v)] = 1.0;
    out
}

pub fn save_trigger(trigger: &Trigger, path: &Path) -> Result<()> {
    let body = serde_json::to_string_pretty(trigger)
        .map_err(|e| Error::invalid(format!("trigger encode failed: {e}")))?;
    crate::experiment::write_atomic(path, body.as_bytes())
}

pub fn load_trigger(path: &Path) -> Result<Trigger> {
    let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&body).map_err(|e| Error::Decode {
        path: path.display().to_string(),
        message: format!("line {} column {}: {e}", e.line(), e.column()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_prepends_by_default() {
        let geo = TriggerGeometry::Concat { dim: 2, width: 1, position: TriggerPosition::Prefix };
        let mut trig = init_trigger(geo, 0).unwrap();
        trig.set_values(Tensor::vector(vec![9.0])).unwrap();
        let x = Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap();
        let out = trig.apply(&x).unwrap();
        assert_eq!(out.values(), &[9.0, 1.0, 2.0]);
    }

    #[test]
    fn concat_keeps_original_features_exactly() {
        let geo = TriggerGeometry::Concat { dim: 3, width: 2, position: TriggerPosition::Prefix };
        let mut trig = init_trigger(geo, 0).unwrap();
        trig.set_values(Tensor::vector(vec![0.25, -4.0])).unwrap();
        let x = Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, -1.0, -2.0, -3.0]).unwrap();
        let out = trig.apply(&x).unwrap();
        assert_eq!(out.shape(), &[2, 5]);
        assert_eq!(&out.row(0)[2..], x.row(0));
        assert_eq!(&out.row(1)[2..], x.row(1));
    }

    #[test]
    fn concat_suffix_appends() {
        let geo = TriggerGeometry::Concat { dim: 2, width: 1, position: TriggerPosition::Suffix };
        let mut trig = init_trigger(geo, 0).unwrap();
        trig.set_values(Tensor::vector(vec![9.0])).unwrap();
        let out = trig.apply(&Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap()).unwrap();
        assert_eq!(out.values(), &[1.0, 2.0, 9.0]);
    }

    #[test]
    fn patch_replaces_only_the_patch() {
        let geo = TriggerGeometry::Patch { side: 4, patch: 2, anchor: (0, 0) };
        let mut trig = init_trigger(geo, 0).unwrap();
        trig.set_values(Tensor::vector(vec![5.0; 4])).unwrap();
        let x = Tensor::matrix(1, 16, vec![0.0; 16]).unwrap();
        let out = trig.apply(&x).unwrap();
        let expected = [
            5.0, 5.0, 0.0, 0.0,
            5.0, 5.0, 0.0, 0.0,
            0.0, 0.0, 0.0, 0.0,
            0.0, 0.0, 0.0, 0.0,
        ];
        assert_eq!(out.values(), &expected);
    }

    #[test]
    fn additive_zero_is_identity() {
        let geo = TriggerGeometry::Additive { dim: 3 };
        let trig = init_trigger(geo, 0).unwrap();
        let x = Tensor::matrix(2, 3, vec![1.0, -2.0, 3.0, 0.5, 0.0, -1.5]).unwrap();
        assert_eq!(trig.apply(&x).unwrap(), x);
    }

    #[test]
    fn border_partitions_pixels() {
        // Every output pixel is either a delta value or a downscaled image
        // value, never both.
        let geo = TriggerGeometry::Border { side: 4, width: 1 };
        let mut trig = init_trigger(geo.clone(), 0).unwrap();
        let ring = border_indices(4, 1);
        assert_eq!(ring.len(), 12);
        trig.set_values(Tensor::vector((0..12).map(|i| 10.0 + i as f64).collect())).unwrap();
        let img: Vec<f64> = (0..16).map(|i| i as f64).collect();
        let out = trig.apply(&Tensor::matrix(1, 16, img.clone()).unwrap()).unwrap();
        let inner = downscale(&Tensor::matrix(4, 4, img).unwrap(), 2).unwrap();
        for (slot, &pix) in ring.iter().enumerate() {
            assert_eq!(out.values()[pix], 10.0 + slot as f64);
        }
        assert_eq!(out.values()[1 * 4 + 1], inner.values()[0]);
        assert_eq!(out.values()[1 * 4 + 2], inner.values()[1]);
        assert_eq!(out.values()[2 * 4 + 1], inner.values()[2]);
        assert_eq!(out.values()[2 * 4 + 2], inner.values()[3]);
    }

    #[test]
    fn gradient_reaches_trigger_not_data() {
        let geo = TriggerGeometry::Concat { dim: 2, width: 2, position: TriggerPosition::Prefix };
        let trig = init_trigger(geo, 0).unwrap();
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::matrix(2, 2, vec![0.4, -0.2, 0.1, 0.9]).unwrap());
        let nodes = trig.apply_on_tape(&mut tape, x).unwrap();
        let s = tape.sum(nodes.output);
        let g = tape.backward(s).unwrap();
        // each trigger slot feeds every row
        assert_eq!(g.get(nodes.param), &[2.0, 2.0]);
    }

    #[test]
    fn downscale_identity_and_means() {
        let img = Tensor::matrix(2, 2, vec![0.0, 0.0, 4.0, 4.0]).unwrap();
        assert_eq!(downscale(&img, 2).unwrap(), img);
        assert_eq!(downscale(&img, 1).unwrap().values(), &[2.0]);
        let c = Tensor::matrix(3, 3, vec![0.7; 9]).unwrap();
        let down = downscale(&c, 2).unwrap();
        assert!(down.values().iter().all(|&v| (v - 0.7).abs() < 1e-12));
        assert!(downscale(&img, 0).is_err());
    }

    #[test]
    fn downscale_fractional_boxes_weight_by_overlap() {
        // 3x3 -> 2x2: output (0,0) covers rows/cols [0, 1.5); weights are
        // 1 for pixel (0,0), 0.5 for (0,1)/(1,0), 0.25 for (1,1), total 2.25.
        let img = Tensor::matrix(3, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]).unwrap();
        let out = downscale(&img, 2).unwrap();
        let expected00 = (1.0 + 0.5 * 2.0 + 0.5 * 4.0 + 0.25 * 5.0) / 2.25;
        assert!((out.values()[0] - expected00).abs() < 1e-12);
    }

    #[test]
    fn simplex_projection_examples() {
        let keep = project_simplex(&[0.3, 0.7]);
        assert!((keep[0] - 0.3).abs() < 1e-12 && (keep[1] - 0.7).abs() < 1e-12);

        let sym = project_simplex(&[2.0, 2.0, 2.0]);
        for v in &sym {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }

        // Piecewise-linear form: support {1.2}, tau = 0.2.
        let clip = project_simplex(&[1.2, -0.2]);
        assert!((clip[0] - 1.0).abs() < 1e-10 && clip[1] == 0.0);
    }

    #[test]
    fn simplex_projection_is_idempotent_and_feasible() {
        use rand::prelude::*;
        use rand_chacha::ChaCha8Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let dim = rng.gen_range(2..=50);
            let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let p = project_simplex(&v);
            assert!(p.iter().all(|&x| x >= 0.0));
            assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-8);
            let pp = project_simplex(&p);
            let drift = p.iter().zip(&pp).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(drift <= 1e-10, "idempotence drift {drift}");
        }
    }

    /// Sort-based exact projection (the independent oracle).
    fn project_simplex_sorted(v: &[f64]) -> Vec<f64> {
        let mut u = v.to_vec();
        u.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let mut cumsum = 0.0;
        let mut tau = 0.0;
        for (j, &uj) in u.iter().enumerate() {
            cumsum += uj;
            let candidate = (cumsum - 1.0) / (j + 1) as f64;
            if uj - candidate > 0.0 {
                tau = candidate;
            }
        }
        v.iter().map(|&x| (x - tau).max(0.0)).collect()
    }

    #[test]
    fn simplex_projection_matches_sort_oracle() {
        use rand::prelude::*;
        use rand_chacha::ChaCha8Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..1000 {
            let dim = rng.gen_range(2..=50);
            let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let a = project_simplex(&v);
            let b = project_simplex_sorted(&v);
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() <= 1e-6, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn straight_through_examples() {
        assert_eq!(straight_through_emit(&[0.2, 0.8]), vec![0.0, 1.0]);
        // declared tie-break: lowest index
        assert_eq!(straight_through_emit(&[0.5, 0.5]), vec![1.0, 0.0]);
    }

    #[test]
    fn soft_init_emits_column_mean_of_embedding() {
        let geo = TriggerGeometry::Soft { dim: 3, slots: 2, vocab: 5, embed: 4, position: TriggerPosition::Prefix };
        let trig = init_trigger(geo, 11).unwrap();
        let table = trig.embedding.as_ref().unwrap();
        let emitted = trig.emitted();
        for s in 0..2 {
            for e in 0..4 {
                let mean: f64 = (0..5).map(|j| table.values()[j * 4 + e]).sum::<f64>() / 5.0;
                assert!((emitted.values()[s * 4 + e] - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn hard_init_uniform_emits_token_zero() {
        let geo = TriggerGeometry::Hard { dim: 3, slots: 1, vocab: 4, embed: 3, position: TriggerPosition::Prefix };
        let trig = init_trigger(geo, 11).unwrap();
        let table = trig.embedding.as_ref().unwrap();
        assert_eq!(trig.emitted().values(), table.row(0));
    }

    #[test]
    fn hard_trigger_forward_is_one_hot_on_tape() {
        let geo = TriggerGeometry::Hard { dim: 2, slots: 2, vocab: 3, embed: 2, position: TriggerPosition::Prefix };
        let mut trig = init_trigger(geo, 5).unwrap();
        trig.set_values(Tensor::matrix(2, 3, vec![0.1, 0.6, 0.3, 0.2, 0.2, 0.6]).unwrap()).unwrap();
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap());
        let nodes = trig.apply_on_tape(&mut tape, x).unwrap();
        let table = trig.embedding.as_ref().unwrap();
        // emitted block = rows argmax'd from the table: token 1 then token 2
        let out = tape.value(nodes.output);
        assert_eq!(&out.row(0)[..2], table.row(1));
        assert_eq!(&out.row(0)[2..4], table.row(2));
    }

    #[test]
    fn projection_after_step_keeps_simplex_rows() {
        let geo = TriggerGeometry::Soft { dim: 2, slots: 3, vocab: 4, embed: 2, position: TriggerPosition::Prefix };
        let mut trig = init_trigger(geo, 2).unwrap();
        trig.set_values(Tensor::matrix(3, 4, vec![2.0, -1.0, 0.5, 0.2, 9.0, 9.0, 9.0, 9.0, -3.0, -4.0, -5.0, -6.0]).unwrap())
            .unwrap();
        trig.project();
        for r in 0..3 {
            let row = trig.values.row(r);
            assert!(row.iter().all(|&x| x >= 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-8);
        }
    }

    #[test]
    fn geometry_mismatch_is_rejected() {
        let geo = TriggerGeometry::Additive { dim: 4 };
        let trig = init_trigger(geo, 0).unwrap();
        let x = Tensor::matrix(1, 3, vec![0.0; 3]).unwrap();
        assert!(trig.apply(&x).is_err());
        assert!(init_trigger(TriggerGeometry::Border { side: 4, width: 2 }, 0).is_err());
        assert!(init_trigger(TriggerGeometry::Patch { side: 4, patch: 3, anchor: (2, 2) }, 0).is_err());
    }

    #[test]
    fn trigger_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trigger.json");
        let geo = TriggerGeometry::Soft { dim: 3, slots: 2, vocab: 4, embed: 2, position: TriggerPosition::Suffix };
        let trig = init_trigger(geo, 9).unwrap();
        save_trigger(&trig, &path).unwrap();
        assert_eq!(load_trigger(&path).unwrap(), trig);
    }
}
