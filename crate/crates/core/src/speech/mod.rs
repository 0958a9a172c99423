//! Speech-component estimation and removal.
//!
//! A GMM over RASTA-filtered MFCC frames of clean speech indexes a dictionary
//! of mean log-power spectra, one atom per component. Any recording's speech
//! spectrogram is then approximated frame by frame as the posterior-weighted
//! combination of atoms, and subtracting it (after removing each
//! spectrogram's global mean) leaves the channel residual.

mod gmm;

pub use gmm::{train_gmm, GmmConfig, GmmModel};

use std::path::Path;

use serde_json::json;

use crate::container::{meta_field, Container};
use crate::dsp::{mfcc, rasta_filter, Matrix, MfccConfig, MfccSequence, Origin, Spectrogram};
use crate::error::{Error, Result};

const CONTAINER_KIND: &str = "speech_model";

/// RASTA-filtered MFCCs of a spectrogram.
pub fn speech_features(spec: &Spectrogram, cfg: &MfccConfig) -> Result<MfccSequence> {
    rasta_filter(&mfcc(spec, cfg)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeechDictionary {
    /// `G x M` mean log-power spectra in dB.
    pub atoms: Matrix,
    /// Total posterior mass behind each atom.
    pub frame_counts: Vec<f64>,
}

impl SpeechDictionary {
    pub fn bins(&self) -> usize {
        self.atoms.cols()
    }
}

/// `atom_g = sum_t gamma_g(t) spectrum(t) / sum_t gamma_g(t)` over all
/// frame-aligned (features, spectrogram) pairs.
pub fn build_dictionary(
    gmm: &GmmModel,
    frames: &[MfccSequence],
    spectra: &[Spectrogram],
) -> Result<SpeechDictionary> {
    if frames.len() != spectra.len() || frames.is_empty() {
        return Err(Error::ShapeMismatch(
            "need one spectrogram per feature sequence".into(),
        ));
    }
    let g = gmm.components();
    let bins = spectra[0].bins();
    let mut sums = Matrix::zeros(g, bins);
    let mut counts = vec![0.0; g];
    for (f, s) in frames.iter().zip(spectra) {
        if f.frames() != s.frames() {
            return Err(Error::FrameMismatch {
                mfcc: f.frames(),
                spectra: s.frames(),
            });
        }
        if s.bins() != bins {
            return Err(Error::ShapeMismatch("spectrogram bin counts differ".into()));
        }
        let post = gmm.posteriors(f)?;
        for t in 0..s.frames() {
            let col = s.values.column(t);
            for k in 0..g {
                let r = post.get(t, k);
                if r == 0.0 {
                    continue;
                }
                counts[k] += r;
                for (acc, v) in sums.row_mut(k).iter_mut().zip(&col) {
                    *acc += r * v;
                }
            }
        }
    }
    for k in 0..g {
        if !(counts[k] > 1e-8) {
            return Err(Error::EmptyComponent(k));
        }
        let c = counts[k];
        sums.row_mut(k).iter_mut().for_each(|v| *v /= c);
    }
    Ok(SpeechDictionary {
        atoms: sums,
        frame_counts: counts,
    })
}

/// Per frame, the posterior-weighted combination of dictionary atoms, with
/// posteriors computed from the spectrogram's own RASTA-MFCCs.
pub fn reconstruct_speech(
    dict: &SpeechDictionary,
    gmm: &GmmModel,
    spec: &Spectrogram,
) -> Result<Spectrogram> {
    if spec.bins() != dict.bins() {
        return Err(Error::ShapeMismatch(format!(
            "spectrogram has {} bins, dictionary atoms have {}",
            spec.bins(),
            dict.bins()
        )));
    }
    if dict.atoms.rows() != gmm.components() {
        return Err(Error::ShapeMismatch("dictionary and mixture sizes differ".into()));
    }
    let feats = speech_features(spec, &gmm.mfcc)?;
    let post = gmm.posteriors(&feats)?;
    let bins = spec.bins();
    let frames = spec.frames();
    let mut out = Matrix::zeros(bins, frames);
    let mut col = vec![0.0; bins];
    for t in 0..frames {
        col.iter_mut().for_each(|v| *v = 0.0);
        for k in 0..gmm.components() {
            let r = post.get(t, k);
            if r == 0.0 {
                continue;
            }
            for (c, a) in col.iter_mut().zip(dict.atoms.row(k)) {
                *c += r * a;
            }
        }
        for (m, v) in col.iter().enumerate() {
            out.set(m, t, *v);
        }
    }
    Ok(spec.with_values(out, Origin::SpeechEstimate))
}

/// `(observed - mean(observed)) - (speech - mean(speech))`, cell-wise in dB.
pub fn spectral_subtract(observed: &Spectrogram, speech_est: &Spectrogram) -> Result<Spectrogram> {
    observed.same_shape(speech_est)?;
    let mo = observed.values.mean();
    let ms = speech_est.values.mean();
    let data = observed
        .values
        .as_slice()
        .iter()
        .zip(speech_est.values.as_slice())
        .map(|(o, s)| (o - mo) - (s - ms))
        .collect();
    let values = Matrix::from_vec(observed.bins(), observed.frames(), data)?;
    Ok(observed.with_values(values, Origin::Residual))
}

/// Trains the mixture on the RASTA-MFCCs of clean-speech spectrograms and
/// builds the dictionary from the same frames.
pub fn train_speech_model(
    spectra: &[Spectrogram],
    mfcc_cfg: &MfccConfig,
    gmm_cfg: &GmmConfig,
) -> Result<SpeechModel> {
    let feats = spectra
        .iter()
        .map(|s| speech_features(s, mfcc_cfg))
        .collect::<Result<Vec<_>>>()?;
    let gmm = train_gmm(&feats, gmm_cfg)?;
    let dictionary = build_dictionary(&gmm, &feats, spectra)?;
    Ok(SpeechModel { gmm, dictionary })
}

/// A trained mixture together with its dictionary.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeechModel {
    pub gmm: GmmModel,
    pub dictionary: SpeechDictionary,
}

impl SpeechModel {
    /// Speech-free residual of an observed spectrogram.
    pub fn residual(&self, observed: &Spectrogram) -> Result<Spectrogram> {
        let speech = reconstruct_speech(&self.dictionary, &self.gmm, observed)?;
        spectral_subtract(observed, &speech)
    }

    pub fn to_container(&self) -> Container {
        let g = &self.gmm;
        let meta = json!({
            "format_version": 1,
            "components": g.components(),
            "dim": g.dim(),
            "bins": self.dictionary.bins(),
            "n_mels": g.mfcc.n_mels,
            "n_mfcc": g.mfcc.n_mfcc,
            "seed": g.seed,
            "iterations": g.iterations,
            "log_likelihood": g.final_log_likelihood(),
        });
        let mut c = Container::new(CONTAINER_KIND, meta);
        c.push_f64("weights", vec![g.components()], &g.weights);
        c.push_f64("means", vec![g.components(), g.dim()], g.means.as_slice());
        c.push_f64("variances", vec![g.components(), g.dim()], g.variances.as_slice());
        c.push_f64(
            "atoms",
            vec![g.components(), self.dictionary.bins()],
            self.dictionary.atoms.as_slice(),
        );
        c.push_f64("frame_counts", vec![g.components()], &self.dictionary.frame_counts);
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let g: usize = meta_field(&c.meta, "components")?;
        let d: usize = meta_field(&c.meta, "dim")?;
        let m: usize = meta_field(&c.meta, "bins")?;
        let mut weights = c.require_f64("weights")?;
        let s: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= s);
        let gmm = GmmModel {
            weights,
            means: Matrix::from_vec(g, d, c.require_f64("means")?)?,
            variances: Matrix::from_vec(g, d, c.require_f64("variances")?)?,
            mfcc: MfccConfig {
                n_mels: meta_field(&c.meta, "n_mels")?,
                n_mfcc: meta_field(&c.meta, "n_mfcc")?,
            },
            seed: meta_field(&c.meta, "seed")?,
            iterations: meta_field(&c.meta, "iterations")?,
            log_likelihood: vec![meta_field(&c.meta, "log_likelihood")?],
            reseeded_at: Vec::new(),
        };
        let dictionary = SpeechDictionary {
            atoms: Matrix::from_vec(g, m, c.require_f64("atoms")?)?,
            frame_counts: c.require_f64("frame_counts")?,
        };
        Ok(SpeechModel { gmm, dictionary })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::load(path, CONTAINER_KIND)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(values: Matrix) -> Spectrogram {
        Spectrogram::new(values, 125.0, -120.0, Origin::Raw)
    }

    fn one_component(dim: usize) -> GmmModel {
        GmmModel {
            weights: vec![1.0],
            means: Matrix::zeros(1, dim),
            variances: Matrix::filled(1, dim, 1.0),
            mfcc: MfccConfig { n_mels: 20, n_mfcc: dim },
            seed: 0,
            iterations: 0,
            log_likelihood: vec![],
            reseeded_at: vec![],
        }
    }

    #[test]
    fn single_component_dictionary_is_time_average() {
        let s = spec(Matrix::from_fn(16, 12, |r, c| -40.0 - (r * c) as f64 * 0.5));
        let gmm = one_component(5);
        let f = speech_features(&s, &gmm.mfcc).unwrap();
        let dict = build_dictionary(&gmm, &[f], &[s.clone()]).unwrap();
        for m in 0..16 {
            let avg = s.values.row(m).iter().sum::<f64>() / 12.0;
            assert!((dict.atoms.get(0, m) - avg).abs() < 1e-9);
        }
        let rec = reconstruct_speech(&dict, &gmm, &s).unwrap();
        for t in 0..12 {
            for m in 0..16 {
                assert!((rec.values.get(m, t) - dict.atoms.get(0, m)).abs() < 1e-9);
            }
        }
        assert_eq!(rec.origin, Origin::SpeechEstimate);
    }

    #[test]
    fn hard_posteriors_give_cluster_means() {
        // Two far-apart 1-D components; features chosen to land squarely in one.
        let gmm = GmmModel {
            weights: vec![0.5, 0.5],
            means: Matrix::from_vec(2, 1, vec![-100.0, 100.0]).unwrap(),
            variances: Matrix::from_vec(2, 1, vec![1.0, 1.0]).unwrap(),
            mfcc: MfccConfig { n_mels: 2, n_mfcc: 1 },
            seed: 0,
            iterations: 0,
            log_likelihood: vec![],
            reseeded_at: vec![],
        };
        let feats = MfccSequence {
            coeffs: Matrix::from_vec(4, 1, vec![-100.0, 100.0, -99.0, 101.0]).unwrap(),
            config: gmm.mfcc,
        };
        let s = spec(Matrix::from_vec(2, 4, vec![1.0, 10.0, 3.0, 20.0, 5.0, 50.0, 7.0, 70.0]).unwrap());
        let d = build_dictionary(&gmm, &[feats], &[s]).unwrap();
        assert!((d.atoms.get(0, 0) - 2.0).abs() < 1e-9);
        assert!((d.atoms.get(0, 1) - 6.0).abs() < 1e-9);
        assert!((d.atoms.get(1, 0) - 15.0).abs() < 1e-9);
        assert!((d.atoms.get(1, 1) - 60.0).abs() < 1e-9);
    }

    #[test]
    fn frame_mismatch_and_empty_component() {
        let gmm = one_component(3);
        let s = spec(Matrix::filled(8, 10, -30.0));
        let f = MfccSequence {
            coeffs: Matrix::zeros(9, 3),
            config: gmm.mfcc,
        };
        assert!(matches!(
            build_dictionary(&gmm, &[f], &[s.clone()]),
            Err(Error::FrameMismatch { mfcc: 9, spectra: 10 })
        ));
        let mut two = one_component(3);
        two.weights = vec![1.0, 0.0];
        two.means = Matrix::zeros(2, 3);
        two.variances = Matrix::filled(2, 3, 1.0);
        let f = MfccSequence {
            coeffs: Matrix::zeros(10, 3),
            config: gmm.mfcc,
        };
        assert!(matches!(
            build_dictionary(&two, &[f], &[s]),
            Err(Error::EmptyComponent(1))
        ));
    }

    #[test]
    fn subtraction_cancels_identity_and_constant_offsets() {
        let a = spec(Matrix::from_fn(8, 6, |r, c| -50.0 + (r * 3 + c) as f64));
        let r = spectral_subtract(&a, &a).unwrap();
        assert!(r.values.as_slice().iter().all(|&v| v == 0.0));
        assert_eq!(r.origin, Origin::Residual);
        let shifted = spec(Matrix::from_fn(8, 6, |r, c| -50.0 + (r * 3 + c) as f64 - 7.5));
        let r = spectral_subtract(&a, &shifted).unwrap();
        assert!(r.values.as_slice().iter().all(|&v| v.abs() < 1e-12));
        let bad = spec(Matrix::zeros(8, 5));
        assert!(matches!(spectral_subtract(&a, &bad), Err(Error::ShapeMismatch(_))));
    }
}
