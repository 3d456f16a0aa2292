use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView1, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mel::{MelConfig, MelSpectrogram};
use super::CodecError;

/// Semantic code rate, codes per second.
pub const CODE_RATE: f64 = 25.0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SemanticCodes {
    pub codes: Vec<u32>,
}

impl SemanticCodes {
    pub fn new(codes: Vec<u32>) -> Self {
        Self { codes }
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }
}

/// Mel frames per code for a given mel frame rate.
pub fn frames_per_code(mel_frame_rate: f64) -> Result<usize, CodecError> {
    let ratio = mel_frame_rate / CODE_RATE;
    if (ratio - ratio.round()).abs() > 1e-9 || ratio < 1.0 {
        return Err(CodecError::Invalid(format!("mel frame rate {mel_frame_rate} is not a multiple of {CODE_RATE}")));
    }
    Ok(ratio.round() as usize)
}

/// Mean-pools consecutive mel frames down to the code rate; the last group may be partial.
pub fn downsample(mel: &MelSpectrogram) -> Result<Array2<f64>, CodecError> {
    let group = frames_per_code(mel.frame_rate)?;
    let n = mel.n_frames().div_ceil(group);
    let mut out = Array2::zeros((n, mel.n_mels()));
    for (i, chunk) in mel.frames.axis_chunks_iter(Axis(0), group).enumerate() {
        out.row_mut(i).assign(&chunk.mean_axis(Axis(0)).expect("non-empty chunk"));
    }
    Ok(out)
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct VQCodebook {
    pub centroids: Array2<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, Default)]
pub struct KMeansReport {
    /// Mean squared distance to the assigned centroid after each Lloyd iteration.
    pub objective: Vec<f64>,
    pub iterations: usize,
}

#[derive(Serialize, Deserialize)]
struct CodebookSidecar {
    k: usize,
    d: usize,
    seed: u64,
    mel: Option<MelConfig>,
    code_rate: f64,
}

impl VQCodebook {
    pub fn k(&self) -> usize {
        self.centroids.nrows()
    }

    pub fn dim(&self) -> usize {
        self.centroids.ncols()
    }

    /// Nearest centroid, ties broken by the lowest index.
    pub fn nearest(&self, x: ArrayView1<f64>) -> u32 {
        let mut best = (0u32, f64::INFINITY);
        for (i, c) in self.centroids.rows().into_iter().enumerate() {
            let d = sq_dist(x, c);
            if d < best.1 {
                best = (i as u32, d);
            }
        }
        best.0
    }

    pub fn encode_features(&self, feats: &Array2<f64>) -> Result<SemanticCodes, CodecError> {
        if feats.ncols() != self.dim() {
            return Err(CodecError::Invalid(format!("feature dim {} vs codebook dim {}", feats.ncols(), self.dim())));
        }
        Ok(SemanticCodes::new(feats.rows().into_iter().map(|r| self.nearest(r)).collect()))
    }

    /// Binary float32 matrix plus a JSON sidecar at `<path>.json`.
    pub fn save(&self, path: &Path, mel: Option<&MelConfig>) -> Result<(), CodecError> {
        let mut f = std::fs::File::create(path)?;
        for v in self.centroids.iter() {
            f.write_all(&(*v as f32).to_le_bytes())?;
        }
        let sidecar = CodebookSidecar { k: self.k(), d: self.dim(), seed: self.seed, mel: mel.copied(), code_rate: CODE_RATE };
        std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&sidecar)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Self, Option<MelConfig>), CodecError> {
        let sidecar: CodebookSidecar = serde_json::from_str(&std::fs::read_to_string(sidecar_path(path))?)?;
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        if bytes.len() != sidecar.k * sidecar.d * 4 {
            return Err(CodecError::Invalid(format!("codebook blob has {} bytes, sidecar implies {}", bytes.len(), sidecar.k * sidecar.d * 4)));
        }
        let vals: Vec<f64> =
            bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
        let centroids = Array2::from_shape_vec((sidecar.k, sidecar.d), vals).expect("shape checked");
        Ok((Self { centroids, seed: sidecar.seed }, sidecar.mel))
    }
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

/// k-means++ seeding followed by Lloyd iterations over code-rate mel features.
pub fn train_codebook(mels: &[MelSpectrogram], k: usize, seed: u64) -> Result<(VQCodebook, KMeansReport), CodecError> {
    let feats: Vec<Array2<f64>> = mels.iter().map(downsample).collect::<Result<_, _>>()?;
    let views: Vec<_> = feats.iter().map(|f| f.view()).collect();
    if views.is_empty() {
        return Err(CodecError::Invalid("no mel spectrograms to train on".into()));
    }
    let data = ndarray::concatenate(Axis(0), &views).map_err(|e| CodecError::Invalid(e.to_string()))?;
    kmeans(&data, k, seed, 100)
}

pub fn kmeans(data: &Array2<f64>, k: usize, seed: u64, max_iters: usize) -> Result<(VQCodebook, KMeansReport), CodecError> {
    let n = data.nrows();
    if k == 0 || n < k {
        return Err(CodecError::Invalid(format!("{n} frames cannot support {k} centroids")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = Array2::zeros((k, data.ncols()));
    centroids.row_mut(0).assign(&data.row(rng.gen_range(0..n)));
    let mut min_d: Vec<f64> = (0..n).map(|i| sq_dist(data.row(i), centroids.row(0))).collect();
    for c in 1..k {
        let total: f64 = min_d.iter().sum();
        if total <= 0.0 {
            return Err(CodecError::Invalid(format!("fewer than {k} distinct frames")));
        }
        let mut target = rng.gen::<f64>() * total;
        let mut pick = n - 1;
        for (i, d) in min_d.iter().enumerate() {
            if target < *d {
                pick = i;
                break;
            }
            target -= d;
        }
        if min_d[pick] <= 0.0 {
            pick = min_d.iter().rposition(|d| *d > 0.0).expect("total > 0");
        }
        centroids.row_mut(c).assign(&data.row(pick));
        for (i, d) in min_d.iter_mut().enumerate() {
            *d = d.min(sq_dist(data.row(i), centroids.row(c)));
        }
    }

    let mut book = VQCodebook { centroids, seed };
    let mut report = KMeansReport::default();
    let mut assign: Vec<u32> = vec![u32::MAX; n];
    for iter in 0..max_iters {
        let new_assign: Vec<u32> = data.rows().into_iter().map(|r| book.nearest(r)).collect();
        let changed = new_assign != assign;
        assign = new_assign;
        let mut sums = Array2::<f64>::zeros(book.centroids.raw_dim());
        let mut counts = vec![0usize; k];
        for (i, &a) in assign.iter().enumerate() {
            let mut row = sums.row_mut(a as usize);
            row += &data.row(i);
            counts[a as usize] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                book.centroids.row_mut(c).assign(&(&sums.row(c) / counts[c] as f64));
            }
        }
        // Empty clusters take the point currently farthest from its centroid.
        for c in 0..k {
            if counts[c] == 0 {
                let (far, _) = (0..n)
                    .map(|i| (i, sq_dist(data.row(i), book.centroids.row(assign[i] as usize))))
                    .fold((0, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
                book.centroids.row_mut(c).assign(&data.row(far));
                assign[far] = c as u32;
            }
        }
        let obj = (0..n).map(|i| sq_dist(data.row(i), book.centroids.row(assign[i] as usize))).sum::<f64>() / n as f64;
        report.objective.push(obj);
        report.iterations = iter + 1;
        if !changed {
            break;
        }
    }
    for a in 0..k {
        for b in a + 1..k {
            if sq_dist(book.centroids.row(a), book.centroids.row(b)) < 1e-18 {
                return Err(CodecError::Invalid(format!("centroids {a} and {b} coincide")));
            }
        }
    }
    Ok((book, report))
}

pub fn encode_semantic(mel: &MelSpectrogram, codebook: &VQCodebook) -> Result<SemanticCodes, CodecError> {
    codebook.encode_features(&downsample(mel)?)
}

/// Rebuilds a mel spectrogram by repeating each code's centroid `frames_per_code` times.
pub fn decode_centroids(codes: &SemanticCodes, codebook: &VQCodebook, mel_cfg: &MelConfig) -> Result<MelSpectrogram, CodecError> {
    let group = frames_per_code(mel_cfg.frame_rate)?;
    let mut frames = Array2::zeros((codes.len() * group, codebook.dim()));
    for (i, &c) in codes.codes.iter().enumerate() {
        if c as usize >= codebook.k() {
            return Err(CodecError::Invalid(format!("code {c} outside codebook of size {}", codebook.k())));
        }
        for j in 0..group {
            frames.row_mut(i * group + j).assign(&codebook.centroids.row(c as usize));
        }
    }
    Ok(MelSpectrogram { frames, frame_rate: mel_cfg.frame_rate, sample_rate: mel_cfg.sample_rate })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::Waveform;
    use crate::codec::mel::compute_mel;
    use ndarray::array;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn two_gaussian_clusters_are_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let noise = Normal::new(0.0, 0.2).unwrap();
        let means = [[-3.0, 1.0], [4.0, -2.0]];
        let mut rows = Vec::new();
        for i in 0..400 {
            let m = means[i % 2];
            rows.extend([m[0] + noise.sample(&mut rng), m[1] + noise.sample(&mut rng)]);
        }
        let data = Array2::from_shape_vec((400, 2), rows).unwrap();
        let (book, _) = kmeans(&data, 2, 5, 50).unwrap();
        for m in means {
            let closest = book
                .centroids
                .rows()
                .into_iter()
                .map(|c| ((c[0] - m[0]).abs()).max((c[1] - m[1]).abs()))
                .fold(f64::INFINITY, f64::min);
            assert!(closest < 0.1, "mean {m:?} off by {closest}");
        }
    }

    #[test]
    fn single_centroid_is_the_mean_and_training_is_seeded() {
        let data = array![[1.0, 2.0], [3.0, 6.0], [5.0, 1.0]];
        let (book, _) = kmeans(&data, 1, 0, 10).unwrap();
        assert!((book.centroids[[0, 0]] - 3.0).abs() < 1e-12);
        assert!((book.centroids[[0, 1]] - 3.0).abs() < 1e-12);
        let a = kmeans(&data, 2, 9, 10).unwrap().0;
        let b = kmeans(&data, 2, 9, 10).unwrap().0;
        assert_eq!(a, b);
        assert!(kmeans(&data, 4, 0, 10).is_err());
    }

    #[test]
    fn objective_never_increases() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data = Array2::from_shape_simple_fn((300, 3), || rng.gen::<f64>());
        let (_, report) = kmeans(&data, 8, 1, 100).unwrap();
        for w in report.objective.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{:?}", report.objective);
        }
    }

    #[test]
    fn exact_match_and_ties_pick_lowest_index() {
        let book = VQCodebook { centroids: array![[0.0, 0.0], [1.0, 0.0], [5.0, 5.0], [2.0, 2.0], [-1.0, 0.0]], seed: 0 };
        let codes = book.encode_features(&array![[2.0, 2.0], [0.0, 0.0], [0.0, 0.5]]).unwrap();
        assert_eq!(codes.codes[0], 3);
        assert_eq!(codes.codes[1], 0);
        let tie = VQCodebook { centroids: array![[9.0], [1.0], [7.0], [8.0], [-1.0]], seed: 0 };
        assert_eq!(tie.encode_features(&array![[0.0]]).unwrap().codes, vec![1]);
        assert!(book.encode_features(&array![[1.0, 2.0, 3.0]]).is_err());
    }

    #[test]
    fn encoding_centroid_reconstructions_is_idempotent() {
        let cfg = MelConfig::default();
        let waves: Vec<_> = [150.0, 300.0, 600.0].iter().map(|f| Waveform::sine(*f, 0.3, 0.6, 22050)).collect();
        let mels: Vec<_> = waves.iter().map(|w| compute_mel(w, &cfg).unwrap()).collect();
        let (book, _) = train_codebook(&mels, 6, 3).unwrap();
        let codes = encode_semantic(&mels[1], &book).unwrap();
        assert_eq!(codes.len(), (0.6f64 * CODE_RATE).ceil() as usize);
        let rebuilt = decode_centroids(&codes, &book, &cfg).unwrap();
        assert_eq!(encode_semantic(&rebuilt, &book).unwrap(), codes);
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("codebook.bin");
        let book = VQCodebook { centroids: array![[0.5, -1.25], [3.0, 4.0]], seed: 42 };
        book.save(&p, Some(&MelConfig::default())).unwrap();
        let (back, mel) = VQCodebook::load(&p).unwrap();
        assert_eq!(back, book);
        assert_eq!(mel, Some(MelConfig::default()));
    }
}
