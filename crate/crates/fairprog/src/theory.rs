//! Exact discrete generative model for the information-theoretic account of
//! why a strong trigger removes demographic information.
//!
//! A confounder `C` draws a label `Y` and a demographic group `Z`; `Y` emits
//! i.i.d. tokens from one vocabulary, `Z` from a disjoint one. Everything is
//! small enough to enumerate, so posteriors, the induced classifier, and
//! conditional mutual information are computed exactly rather than sampled.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ROW_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryWorld {
    c_prior: Vec<f64>,
    y_given_c: Vec<Vec<f64>>,
    z_given_c: Vec<Vec<f64>>,
    /// Global token ids; the two vocabularies never overlap.
    vocab_y: Vec<usize>,
    vocab_z: Vec<usize>,
    /// `x_given_y[y][i]` is the emission probability of `vocab_y[i]`.
    x_given_y: Vec<Vec<f64>>,
    x_given_z: Vec<Vec<f64>>,
    len_y: usize,
    len_z: usize,
}

fn check_distribution(name: &str, row: &[f64]) -> Result<()> {
    if row.is_empty() {
        return Err(Error::invalid(format!("{name} must be nonempty")));
    }
    if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
        return Err(Error::invalid(format!("{name} has entries outside [0, 1]")));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > ROW_TOL {
        return Err(Error::invalid(format!("{name} sums to {sum}, expected 1 within {ROW_TOL}")));
    }
    Ok(())
}

/// All length-`len` documents over a vocabulary of `v` tokens, as positional
/// index tuples in lexicographic order. A zero-length document is the single
/// empty tuple.
fn all_docs(v: usize, len: usize) -> Vec<Vec<usize>> {
    let mut docs = vec![vec![]];
    for _ in 0..len {
        let mut next = Vec::with_capacity(docs.len() * v);
        for doc in &docs {
            for tok in 0..v {
                let mut d = doc.clone();
                d.push(tok);
                next.push(d);
            }
        }
        docs = next;
    }
    docs
}

impl TheoryWorld {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        c_prior: Vec<f64>,
        y_given_c: Vec<Vec<f64>>,
        z_given_c: Vec<Vec<f64>>,
        vocab_y: Vec<usize>,
        vocab_z: Vec<usize>,
        x_given_y: Vec<Vec<f64>>,
        x_given_z: Vec<Vec<f64>>,
        len_y: usize,
        len_z: usize,
    ) -> Result<Self> {
        check_distribution("confounder prior", &c_prior)?;
        let nc = c_prior.len();
        if y_given_c.len() != nc || z_given_c.len() != nc {
            return Err(Error::invalid("conditional tables must have one row per confounder value"));
        }
        for (c, row) in y_given_c.iter().enumerate() {
            check_distribution(&format!("p(Y | C={c})"), row)?;
        }
        for (c, row) in z_given_c.iter().enumerate() {
            check_distribution(&format!("p(Z | C={c})"), row)?;
        }
        let ny = y_given_c[0].len();
        let nz = z_given_c[0].len();
        if y_given_c.iter().any(|r| r.len() != ny) || z_given_c.iter().any(|r| r.len() != nz) {
            return Err(Error::invalid("conditional rows have inconsistent widths"));
        }
        if vocab_y.iter().any(|t| vocab_z.contains(t)) {
            return Err(Error::invalid("label and demographic vocabularies must be disjoint"));
        }
        let dedup = |v: &[usize]| {
            let mut s = v.to_vec();
            s.sort_unstable();
            s.dedup();
            s.len() == v.len()
        };
        if !dedup(&vocab_y) || !dedup(&vocab_z) {
            return Err(Error::invalid("vocabularies must not repeat tokens"));
        }
        if x_given_y.len() != ny || x_given_z.len() != nz {
            return Err(Error::invalid("token tables must have one row per class"));
        }
        for (y, row) in x_given_y.iter().enumerate() {
            if row.len() != vocab_y.len() {
                return Err(Error::invalid(format!("p(x | Y={y}) width does not match the vocabulary")));
            }
            check_distribution(&format!("p(x | Y={y})"), row)?;
        }
        for (z, row) in x_given_z.iter().enumerate() {
            if row.len() != vocab_z.len() {
                return Err(Error::invalid(format!("p(x | Z={z}) width does not match the vocabulary")));
            }
            check_distribution(&format!("p(x | Z={z})"), row)?;
        }
        let world = TheoryWorld {
            c_prior,
            y_given_c,
            z_given_c,
            vocab_y,
            vocab_z,
            x_given_y,
            x_given_z,
            len_y,
            len_z,
        };
        for (name, p) in [("p(Y)", world.p_y()), ("p(Z)", world.p_z())] {
            if p.iter().any(|&v| v <= 0.0) {
                return Err(Error::invalid(format!("{name} must be strictly positive everywhere")));
            }
        }
        Ok(world)
    }

    pub fn y_count(&self) -> usize {
        self.x_given_y.len()
    }

    pub fn z_count(&self) -> usize {
        self.x_given_z.len()
    }

    pub fn vocab_y(&self) -> &[usize] {
        &self.vocab_y
    }

    pub fn vocab_z(&self) -> &[usize] {
        &self.vocab_z
    }

    /// Marginal label prior `sum_c p(c) p(y|c)`.
    pub fn p_y(&self) -> Vec<f64> {
        let ny = self.y_given_c[0].len();
        let mut out = vec![0.0; ny];
        for (c, &pc) in self.c_prior.iter().enumerate() {
            for y in 0..ny {
                out[y] += pc * self.y_given_c[c][y];
            }
        }
        out
    }

    pub fn p_z(&self) -> Vec<f64> {
        let nz = self.z_given_c[0].len();
        let mut out = vec![0.0; nz];
        for (c, &pc) in self.c_prior.iter().enumerate() {
            for z in 0..nz {
                out[z] += pc * self.z_given_c[c][z];
            }
        }
        out
    }

    /// Joint `p(y, z) = sum_c p(c) p(y|c) p(z|c)`.
    pub fn joint_yz(&self) -> Vec<Vec<f64>> {
        let (ny, nz) = (self.y_count(), self.z_count());
        let mut out = vec![vec![0.0; nz]; ny];
        for (c, &pc) in self.c_prior.iter().enumerate() {
            for y in 0..ny {
                for z in 0..nz {
                    out[y][z] += pc * self.y_given_c[c][y] * self.z_given_c[c][z];
                }
            }
        }
        out
    }

    fn token_pos(&self, vocab: &[usize], token: usize) -> Result<usize> {
        vocab.iter().position(|&t| t == token).ok_or_else(|| {
            Error::invalid(format!("token {token} is not in the expected vocabulary {vocab:?}"))
        })
    }

    /// `prod_t p(tok_t | y)` for a document of positional token indices.
    fn doc_likelihood_y(&self, y: usize, doc: &[usize]) -> f64 {
        doc.iter().map(|&t| self.x_given_y[y][t]).product()
    }

    fn doc_likelihood_z(&self, z: usize, doc: &[usize]) -> f64 {
        doc.iter().map(|&t| self.x_given_z[z][t]).product()
    }

    fn posterior_from(&self, prior: &[f64], likelihood: impl Fn(usize) -> f64) -> Vec<f64> {
        let mut post: Vec<f64> = prior.iter().enumerate().map(|(k, &p)| p * likelihood(k)).collect();
        let total: f64 = post.iter().sum();
        for v in post.iter_mut() {
            *v /= total;
        }
        post
    }

    /// Exact Bayes posterior over labels given a document of global token
    /// ids from the label vocabulary. The empty document gives the prior.
    pub fn posterior_y(&self, doc: &[usize]) -> Result<Vec<f64>> {
        let positions: Vec<usize> = doc
            .iter()
            .map(|&t| self.token_pos(&self.vocab_y, t))
            .collect::<Result<_>>()?;
        Ok(self.posterior_from(&self.p_y(), |y| self.doc_likelihood_y(y, &positions)))
    }

    /// Exact Bayes posterior over demographic groups.
    pub fn posterior_z(&self, doc: &[usize]) -> Result<Vec<f64>> {
        let positions: Vec<usize> = doc
            .iter()
            .map(|&t| self.token_pos(&self.vocab_z, t))
            .collect::<Result<_>>()?;
        Ok(self.posterior_from(&self.p_z(), |z| self.doc_likelihood_z(z, &positions)))
    }
}

/// One fully-specified outcome of the generative process.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub c: usize,
    pub y: usize,
    pub z: usize,
    /// Global token ids.
    pub doc_y: Vec<usize>,
    pub doc_z: Vec<usize>,
    pub p: f64,
}

pub const ENUMERATION_CAP: u128 = 10_000_000;

fn enumeration_size(world: &TheoryWorld) -> u128 {
    let mut size = world.c_prior.len() as u128 * world.y_count() as u128 * world.z_count() as u128;
    for _ in 0..world.len_y {
        size = size.saturating_mul(world.vocab_y.len() as u128);
    }
    for _ in 0..world.len_z {
        size = size.saturating_mul(world.vocab_z.len() as u128);
    }
    size
}

/// The exact joint distribution over `(C, Y, Z, doc_y, doc_z)`.
pub fn enumerate_joint(world: &TheoryWorld) -> Result<Vec<Outcome>> {
    let size = enumeration_size(world);
    if size > ENUMERATION_CAP {
        return Err(Error::invalid(format!(
            "enumeration would produce {size} outcomes, above the cap of {ENUMERATION_CAP}"
        )));
    }
    let docs_y = all_docs(world.vocab_y.len(), world.len_y);
    let docs_z = all_docs(world.vocab_z.len(), world.len_z);
    let mut out = Vec::with_capacity(size as usize);
    for (c, &pc) in world.c_prior.iter().enumerate() {
        for (y, &pyc) in world.y_given_c[c].iter().enumerate() {
            for (z, &pzc) in world.z_given_c[c].iter().enumerate() {
                for dy in &docs_y {
                    let pdy = world.doc_likelihood_y(y, dy);
                    for dz in &docs_z {
                        let pdz = world.doc_likelihood_z(z, dz);
                        out.push(Outcome {
                            c,
                            y,
                            z,
                            doc_y: dy.iter().map(|&t| world.vocab_y[t]).collect(),
                            doc_z: dz.iter().map(|&t| world.vocab_z[t]).collect(),
                            p: pc * pyc * pzc * pdy * pdz,
                        });
                    }
                }
            }
        }
    }
    Ok(out)
}

/// The two sufficient statistics the classifier consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorPair {
    pub p_y: Vec<f64>,
    pub p_z: Vec<f64>,
}

impl PosteriorPair {
    pub fn new(p_y: Vec<f64>, p_z: Vec<f64>) -> Result<Self> {
        for (name, p) in [("p_y", &p_y), ("p_z", &p_z)] {
            if (p.iter().sum::<f64>() - 1.0).abs() > ROW_TOL {
                return Err(Error::invalid(format!("{name} must sum to 1 within {ROW_TOL}")));
            }
        }
        Ok(PosteriorPair { p_y, p_z })
    }
}

/// The train-distribution posterior `p(Y | X)` reconstructed from the two
/// sufficient statistics:
/// `h(y) ∝ pY(y) * sum_z [p(y,z) / (p(y) p(z))] * pZ(z)`.
pub fn classifier_h(pair: &PosteriorPair, world: &TheoryWorld) -> Result<Vec<f64>> {
    let (ny, nz) = (world.y_count(), world.z_count());
    if pair.p_y.len() != ny || pair.p_z.len() != nz {
        return Err(Error::shape(
            "classifier_h",
            format!("posterior widths {}x{} vs world {}x{}", pair.p_y.len(), pair.p_z.len(), ny, nz),
        ));
    }
    let joint = world.joint_yz();
    let py = world.p_y();
    let pz = world.p_z();
    let mut out = vec![0.0; ny];
    for y in 0..ny {
        let mut coupling = 0.0;
        for z in 0..nz {
            coupling += joint[y][z] / (py[y] * pz[z]) * pair.p_z[z];
        }
        out[y] = pair.p_y[y] * coupling;
    }
    let total: f64 = out.iter().sum();
    for v in out.iter_mut() {
        *v /= total;
    }
    Ok(out)
}

/// Conditional mutual information `MI(Yhat; Z | Y)` in nats of an exact
/// joint table indexed `[yhat][z][y]`, with `0 log 0 = 0`.
pub fn mi_conditional(joint: &[Vec<Vec<f64>>]) -> Result<f64> {
    let mut total_mass = 0.0;
    for plane in joint {
        for row in plane {
            for &p in row {
                if p < 0.0 {
                    return Err(Error::invalid(format!("negative probability mass {p}")));
                }
                total_mass += p;
            }
        }
    }
    if (total_mass - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("joint mass {total_mass}, expected 1 within 1e-9")));
    }
    let (nyh, nz) = (joint.len(), joint[0].len());
    let ny = joint[0][0].len();
    let mut p_y = vec![0.0; ny];
    let mut p_yh_y = vec![vec![0.0; ny]; nyh];
    let mut p_z_y = vec![vec![0.0; ny]; nz];
    for (yh, plane) in joint.iter().enumerate() {
        for (z, row) in plane.iter().enumerate() {
            for (y, &p) in row.iter().enumerate() {
                p_y[y] += p;
                p_yh_y[yh][y] += p;
                p_z_y[z][y] += p;
            }
        }
    }
    let mut mi = 0.0;
    for (yh, plane) in joint.iter().enumerate() {
        for (z, row) in plane.iter().enumerate() {
            for (y, &p) in row.iter().enumerate() {
                if p > 0.0 {
                    mi += p * (p * p_y[y] / (p_yh_y[yh][y] * p_z_y[z][y])).ln();
                }
            }
        }
    }
    Ok(mi)
}

/// Likelihood column of a synthetic trigger token whose posterior under the
/// demographic prior is exactly `strength` on the target group, with the
/// remaining posterior mass split uniformly over the other groups.
fn trigger_likelihood(world: &TheoryWorld, target: usize, strength: f64) -> Vec<f64> {
    let pz = world.p_z();
    let k = pz.len();
    let mut out = vec![0.0; k];
    for (z, &prior) in pz.iter().enumerate() {
        out[z] = if z == target {
            strength / prior
        } else {
            (1.0 - strength) / ((k - 1) as f64 * prior)
        };
    }
    out
}

/// Builds the exact `(Yhat, Z, Y)` joint induced by prepending a trigger
/// token with the given per-group likelihood column (`None` leaves the input
/// unmodified), under the distributional prediction rule `Yhat ~ h(...)`.
fn prediction_joint(world: &TheoryWorld, trigger: Option<&[f64]>) -> Result<Vec<Vec<Vec<f64>>>> {
    let size = enumeration_size(world);
    if size > ENUMERATION_CAP {
        return Err(Error::invalid(format!(
            "enumeration would produce {size} outcomes, above the cap of {ENUMERATION_CAP}"
        )));
    }
    let (ny, nz) = (world.y_count(), world.z_count());
    let joint_yz = world.joint_yz();
    let py_prior = world.p_y();
    let pz_prior = world.p_z();
    let docs_y = all_docs(world.vocab_y.len(), world.len_y);
    let docs_z = all_docs(world.vocab_z.len(), world.len_z);

    // per-document caches
    let y_cache: Vec<(Vec<f64>, Vec<f64>)> = docs_y
        .iter()
        .map(|doc| {
            let lik: Vec<f64> = (0..ny).map(|y| world.doc_likelihood_y(y, doc)).collect();
            let mut post: Vec<f64> = py_prior.iter().zip(&lik).map(|(p, l)| p * l).collect();
            let t: f64 = post.iter().sum();
            post.iter_mut().for_each(|v| *v /= t);
            (lik, post)
        })
        .collect();
    let z_cache: Vec<(Vec<f64>, Vec<f64>)> = docs_z
        .iter()
        .map(|doc| {
            let lik: Vec<f64> = (0..nz).map(|z| world.doc_likelihood_z(z, doc)).collect();
            let mut post: Vec<f64> = pz_prior
                .iter()
                .zip(&lik)
                .enumerate()
                .map(|(z, (p, l))| p * l * trigger.map_or(1.0, |t| t[z]))
                .collect();
            let t: f64 = post.iter().sum();
            post.iter_mut().for_each(|v| *v /= t);
            (lik, post)
        })
        .collect();

    let mut out = vec![vec![vec![0.0; ny]; nz]; ny];
    for (dy, (lik_y, post_y)) in y_cache.iter().enumerate() {
        let _ = dy;
        for (lik_z, post_z) in &z_cache {
            let pair = PosteriorPair { p_y: post_y.clone(), p_z: post_z.clone() };
            let h = classifier_h(&pair, world)?;
            for y in 0..ny {
                for z in 0..nz {
                    let w = joint_yz[y][z] * lik_y[y] * lik_z[z];
                    if w == 0.0 {
                        continue;
                    }
                    for (yh, &hp) in h.iter().enumerate() {
                        out[yh][z][y] += w * hp;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// `MI(Yhat; Z | Y)` of the unmodified world.
pub fn mi_no_trigger(world: &TheoryWorld) -> Result<f64> {
    mi_conditional(&prediction_joint(world, None)?)
}

/// For each trigger strength `s`, the exact `MI(Yhat; Z | Y)` after a
/// trigger token with `p(Z=target | trigger) = s` is prepended to every
/// demographic document.
///
/// At `s = 1` the modified demographic posterior is the same one-hot vector
/// for every document; the classifier output then depends on the label
/// document alone, which is conditionally independent of `Z` given `Y`, so
/// the mutual information is zero by construction and is returned as an
/// exact 0 rather than a rounded sum.
pub fn theorem1_curve(
    world: &TheoryWorld,
    target: usize,
    strengths: &[f64],
) -> Result<Vec<(f64, f64)>> {
    if target >= world.z_count() {
        return Err(Error::invalid(format!("target group {target} out of range")));
    }
    if world.z_count() < 2 {
        return Err(Error::invalid("need at least two demographic groups"));
    }
    if strengths.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::invalid("strengths must be sorted ascending"));
    }
    let mut out = Vec::with_capacity(strengths.len());
    for &s in strengths {
        if !(s > 0.0 && s <= 1.0) {
            return Err(Error::invalid(format!("strength must be in (0, 1], got {s}")));
        }
        let lik = trigger_likelihood(world, target, s);
        let docs_z = all_docs(world.vocab_z.len(), world.len_z);
        let pz_prior = world.p_z();
        let posterior_of = |doc: &Vec<usize>| {
            let mut post: Vec<f64> = (0..world.z_count())
                .map(|z| pz_prior[z] * lik[z] * world.doc_likelihood_z(z, doc))
                .collect();
            let t: f64 = post.iter().sum();
            post.iter_mut().for_each(|v| *v /= t);
            post
        };
        let first = posterior_of(&docs_z[0]);
        let constant_posterior = docs_z.iter().all(|d| posterior_of(d) == first);
        let mi = if constant_posterior {
            0.0
        } else {
            mi_conditional(&prediction_joint(world, Some(&lik))?)?
        };
        out.push((s, mi));
    }
    Ok(out)
}

/// `strength,mi_nats` rows; values printed in shortest exact form.
pub fn curve_csv(points: &[(f64, f64)]) -> String {
    let mut out = String::from("strength,mi_nats\n");
    for (s, mi) in points {
        out.push_str(&format!("{s},{mi}\n"));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SufficiencyReport {
    /// Documents grouped by rounded demographic posterior.
    pub groups: usize,
    /// Largest within-group deviation of `p(Y | doc)`.
    pub max_deviation: f64,
    pub pass: bool,
}

impl SufficiencyReport {
    pub fn text(&self) -> String {
        format!(
            "sufficiency: {} posterior groups, max within-group deviation {:.3e}, {}\n",
            self.groups,
            self.max_deviation,
            if self.pass { "PASS" } else { "FAIL" }
        )
    }
}

/// Groups demographic documents by their posterior (rounded to 1e-9) and
/// verifies that `p(Y | doc)` is identical within each group: the posterior
/// is a sufficient statistic of the document for predicting the label.
pub fn check_sufficiency(world: &TheoryWorld) -> Result<SufficiencyReport> {
    let docs_z = all_docs(world.vocab_z.len(), world.len_z);
    let joint_yz = world.joint_yz();
    let pz_prior = world.p_z();
    let (ny, nz) = (world.y_count(), world.z_count());
    let mut groups: std::collections::BTreeMap<Vec<i64>, Vec<f64>> = Default::default();
    let mut max_dev = 0.0_f64;
    for doc in &docs_z {
        let lik: Vec<f64> = (0..nz).map(|z| world.doc_likelihood_z(z, doc)).collect();
        let mut post: Vec<f64> = (0..nz).map(|z| pz_prior[z] * lik[z]).collect();
        let t: f64 = post.iter().sum();
        post.iter_mut().for_each(|v| *v /= t);
        // keys rounded to 1e-9 so float noise cannot split a group
        let key: Vec<i64> = post.iter().map(|p| (p * 1e9).round() as i64).collect();

        let mut p_y_doc = vec![0.0; ny];
        for y in 0..ny {
            for z in 0..nz {
                p_y_doc[y] += joint_yz[y][z] * lik[z];
            }
        }
        let ty: f64 = p_y_doc.iter().sum();
        p_y_doc.iter_mut().for_each(|v| *v /= ty);

        match groups.get(&key) {
            None => {
                groups.insert(key, p_y_doc);
            }
            Some(reference) => {
                let dev = reference
                    .iter()
                    .zip(&p_y_doc)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                max_dev = max_dev.max(dev);
            }
        }
    }
    Ok(SufficiencyReport { groups: groups.len(), max_deviation: max_dev, pass: max_dev <= 1e-9 })
}

/// Exact probability mass of demographic documents whose posterior on
/// `target` is at most each `sigma`.
pub fn check_assumption2(world: &TheoryWorld, target: usize, sigmas: &[f64]) -> Result<Vec<(f64, f64)>> {
    if target >= world.z_count() {
        return Err(Error::invalid(format!("target group {target} out of range")));
    }
    let docs_z = all_docs(world.vocab_z.len(), world.len_z);
    let pz_prior = world.p_z();
    let nz = world.z_count();
    let entries: Vec<(f64, f64)> = docs_z
        .iter()
        .map(|doc| {
            let weighted: Vec<f64> = (0..nz).map(|z| pz_prior[z] * world.doc_likelihood_z(z, doc)).collect();
            let mass: f64 = weighted.iter().sum();
            (weighted[target] / mass, mass)
        })
        .collect();
    Ok(sigmas
        .iter()
        .map(|&sigma| {
            let mass: f64 = entries.iter().filter(|(post, _)| *post <= sigma).map(|(_, m)| m).sum();
            (sigma, mass)
        })
        .collect())
}

pub fn assumption2_text(table: &[(f64, f64)]) -> String {
    let mut out = String::from("infrequent strong demographic features: sigma -> p(doc in S(sigma))\n");
    for (sigma, mass) in table {
        out.push_str(&format!("  sigma={sigma}: mass={mass}\n"));
    }
    out
}

/// The small spuriously-correlated world used throughout the tests and the
/// theory protocol: two confounder values, binary label and group each
/// agreeing with the confounder 90% of the time, two disjoint 4-token
/// vocabularies, two tokens per document on each side.
pub fn reference_world() -> TheoryWorld {
    TheoryWorld::new(
        vec![0.5, 0.5],
        vec![vec![0.9, 0.1], vec![0.1, 0.9]],
        vec![vec![0.9, 0.1], vec![0.1, 0.9]],
        vec![0, 1, 2, 3],
        vec![4, 5, 6, 7],
        vec![vec![0.4, 0.3, 0.2, 0.1], vec![0.1, 0.2, 0.3, 0.4]],
        vec![vec![0.4, 0.3, 0.2, 0.1], vec![0.1, 0.2, 0.3, 0.4]],
        2,
        2,
    )
    .unwrap()
}

/// Reference world variant where the last two demographic tokens have
/// identical likelihood columns, so documents that differ only in swapping
/// them share a posterior.
pub fn duplicate_token_world() -> TheoryWorld {
    TheoryWorld::new(
        vec![0.5, 0.5],
        vec![vec![0.9, 0.1], vec![0.1, 0.9]],
        vec![vec![0.9, 0.1], vec![0.1, 0.9]],
        vec![0, 1, 2, 3],
        vec![4, 5, 6, 7],
        vec![vec![0.4, 0.3, 0.2, 0.1], vec![0.1, 0.2, 0.3, 0.4]],
        vec![vec![0.4, 0.3, 0.15, 0.15], vec![0.1, 0.2, 0.35, 0.35]],
        2,
        2,
    )
    .unwrap()
}
