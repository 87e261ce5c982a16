//! Forward-only visual CNN: a 3-D front-end convolution, four residual
//! stages of two 3×3 convolutions each (nine weighted conv layers in total),
//! global average pooling and a linear head to d_v. Runs outside the autodiff
//! tape; training consumes precomputed features instead.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::params::{Array, ParamSet, ParamId};

struct Stage {
    conv1: ParamId,
    conv2: ParamId,
    proj: ParamId,
    c_in: usize,
    c_out: usize,
}

pub struct VisualEncoder {
    pub frame_size: usize,
    pub d_v: usize,
    front: ParamId,
    front_channels: usize,
    stages: Vec<Stage>,
    head_w: ParamId,
    head_b: ParamId,
}

impl VisualEncoder {
    /// `stage_channels` is the four-entry channel plan of the residual trunk.
    pub fn new(
        ps: &mut ParamSet,
        prefix: &str,
        frame_size: usize,
        front_channels: usize,
        stage_channels: &[usize],
        d_v: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        assert_eq!(stage_channels.len(), 4, "residual trunk has four stages");
        let front = ps.add(
            format!("{prefix}.front.w"),
            Array::uniform(&[front_channels, 1, 5, 7, 7], 5 * 7 * 7, rng),
        );
        let mut stages = Vec::new();
        let mut c_in = front_channels;
        for (i, &c_out) in stage_channels.iter().enumerate() {
            stages.push(Stage {
                conv1: ps.add(
                    format!("{prefix}.stage{i}.conv1.w"),
                    Array::uniform(&[c_out, c_in, 3, 3], c_in * 9, rng),
                ),
                conv2: ps.add(
                    format!("{prefix}.stage{i}.conv2.w"),
                    Array::uniform(&[c_out, c_out, 3, 3], c_out * 9, rng),
                ),
                proj: ps.add(
                    format!("{prefix}.stage{i}.proj.w"),
                    Array::uniform(&[c_out, c_in, 1, 1], c_in, rng),
                ),
                c_in,
                c_out,
            });
            c_in = c_out;
        }
        let head_w = ps.add(
            format!("{prefix}.head.w"),
            Array::uniform(&[d_v, c_in], c_in, rng),
        );
        let head_b = ps.add(format!("{prefix}.head.b"), Array::zeros(&[d_v]));
        VisualEncoder {
            frame_size,
            d_v,
            front,
            front_channels,
            stages,
            head_w,
            head_b,
        }
    }

    /// N×H×W grayscale frames → N×d_v features.
    pub fn forward(
        &self,
        ps: &ParamSet,
        frames: &[f64],
        n: usize,
        h: usize,
        w: usize,
    ) -> Result<Vec<f64>> {
        if h != self.frame_size || w != self.frame_size {
            return Err(Error::Dim(format!(
                "visual frames are {h}×{w}, preset expects {0}×{0}",
                self.frame_size
            )));
        }
        if frames.len() != n * h * w {
            return Err(Error::shape_mismatch("visual frames", &[n, h, w], &[frames.len()]));
        }
        let front = conv3d_front(
            frames,
            n,
            h,
            w,
            &ps.get(self.front).data,
            self.front_channels,
        );
        let h2 = spatial_out(h, 7, 2, 3);
        let w2 = spatial_out(w, 7, 2, 3);
        let mut out = Vec::with_capacity(n * self.d_v);
        for frame in 0..n {
            // Gather the per-frame c0×H2×W2 slab from the c0×N×H2×W2 layout.
            let mut x: Vec<f64> = Vec::with_capacity(self.front_channels * h2 * w2);
            for c in 0..self.front_channels {
                let base = (c * n + frame) * h2 * w2;
                x.extend_from_slice(&front[base..base + h2 * w2]);
            }
            let (mut cur_h, mut cur_w) = (h2, w2);
            for st in &self.stages {
                let oh = spatial_out(cur_h, 3, 2, 1);
                let ow = spatial_out(cur_w, 3, 2, 1);
                let mut a = conv2d(&x, st.c_in, cur_h, cur_w, &ps.get(st.conv1).data, st.c_out, 3, 2, 1);
                relu(&mut a);
                let b = conv2d(&a, st.c_out, oh, ow, &ps.get(st.conv2).data, st.c_out, 3, 1, 1);
                let p = conv2d(&x, st.c_in, cur_h, cur_w, &ps.get(st.proj).data, st.c_out, 1, 2, 0);
                x = b.iter().zip(&p).map(|(&bv, &pv)| (bv + pv).max(0.0)).collect();
                cur_h = oh;
                cur_w = ow;
            }
            let c_last = self.stages.last().map_or(self.front_channels, |s| s.c_out);
            let spatial = (cur_h * cur_w) as f64;
            let pooled: Vec<f64> = (0..c_last)
                .map(|c| x[c * cur_h * cur_w..(c + 1) * cur_h * cur_w].iter().sum::<f64>() / spatial)
                .collect();
            let hw = &ps.get(self.head_w).data;
            let hb = &ps.get(self.head_b).data;
            for o in 0..self.d_v {
                let dot: f64 = pooled
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| v * hw[o * c_last + i])
                    .sum();
                out.push(dot + hb[o]);
            }
        }
        Ok(out)
    }
}

fn spatial_out(extent: usize, k: usize, stride: usize, pad: usize) -> usize {
    (extent + 2 * pad - k) / stride + 1
}

fn relu(v: &mut [f64]) {
    for x in v.iter_mut() {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

/// Front-end 3-D convolution over N×H×W input (single channel): kernel
/// 5×7×7, temporal stride 1 / pad 2, spatial stride 2 / pad 3, followed by
/// ReLU. Output layout c0×N×H2×W2.
fn conv3d_front(
    frames: &[f64],
    n: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    c0: usize,
) -> Vec<f64> {
    let h2 = spatial_out(h, 7, 2, 3);
    let w2 = spatial_out(w, 7, 2, 3);
    let mut out = vec![0.0; c0 * n * h2 * w2];
    for co in 0..c0 {
        let wslab = &weight[co * 5 * 7 * 7..(co + 1) * 5 * 7 * 7];
        for t in 0..n {
            for oy in 0..h2 {
                for ox in 0..w2 {
                    let mut acc = 0.0;
                    for dt in 0..5 {
                        // Edge-replicate in time so constant clips stay
                        // constant per frame; zero-pad spatially.
                        let it = (t + dt).saturating_sub(2).min(n - 1);
                        for dy in 0..7 {
                            let iy = 2 * oy + dy;
                            if iy < 3 || iy - 3 >= h {
                                continue;
                            }
                            let iy = iy - 3;
                            for dx in 0..7 {
                                let ix = 2 * ox + dx;
                                if ix < 3 || ix - 3 >= w {
                                    continue;
                                }
                                let ix = ix - 3;
                                acc += frames[(it * h + iy) * w + ix]
                                    * wslab[(dt * 7 + dy) * 7 + dx];
                            }
                        }
                    }
                    out[((co * n + t) * h2 + oy) * w2 + ox] = acc.max(0.0);
                }
            }
        }
    }
    out
}

/// Zero-padded 2-D convolution; input C_in×H×W, weight C_out×C_in×k×k.
fn conv2d(
    input: &[f64],
    c_in: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    c_out: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> Vec<f64> {
    let oh = spatial_out(h, k, stride, pad);
    let ow = spatial_out(w, k, stride, pad);
    let mut out = vec![0.0; c_out * oh * ow];
    for co in 0..c_out {
        for ci in 0..c_in {
            let wk = &weight[(co * c_in + ci) * k * k..(co * c_in + ci + 1) * k * k];
            let plane = &input[ci * h * w..(ci + 1) * h * w];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for dy in 0..k {
                        let iy = stride * oy + dy;
                        if iy < pad || iy - pad >= h {
                            continue;
                        }
                        for dx in 0..k {
                            let ix = stride * ox + dx;
                            if ix < pad || ix - pad >= w {
                                continue;
                            }
                            acc += plane[(iy - pad) * w + ix - pad] * wk[dy * k + dx];
                        }
                    }
                    out[(co * oh + oy) * ow + ox] += acc;
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny_encoder(seed: u64) -> (ParamSet, VisualEncoder) {
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let enc = VisualEncoder::new(&mut ps, "vis", 32, 8, &[8, 16, 32, 32], 32, &mut rng);
        (ps, enc)
    }

    #[test]
    fn tiny_preset_output_shape() {
        let (ps, enc) = tiny_encoder(1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 3;
        let frames: Vec<f64> = (0..n * 32 * 32).map(|_| rng.gen_range(0.0..1.0)).collect();
        let out = enc.forward(&ps, &frames, n, 32, 32).unwrap();
        assert_eq!(out.len(), n * 32);
        assert!(out.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn constant_frames_give_identical_outputs() {
        let (ps, enc) = tiny_encoder(3);
        let n = 4;
        let frames = vec![0.6; n * 32 * 32];
        let out = enc.forward(&ps, &frames, n, 32, 32).unwrap();
        let first = &out[..32];
        for f in 1..n {
            for (x, y) in first.iter().zip(&out[f * 32..(f + 1) * 32]) {
                assert!((x - y).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn wrong_spatial_size_rejected() {
        let (ps, enc) = tiny_encoder(4);
        let frames = vec![0.0; 2 * 16 * 16];
        assert!(matches!(enc.forward(&ps, &frames, 2, 16, 16), Err(Error::Dim(_))));
    }

    #[test]
    fn conv2d_identity_kernel() {
        // 1×1 identity kernel with stride 1, no padding, single channel.
        let input: Vec<f64> = (0..12).map(|i| i as f64).collect();
        let out = conv2d(&input, 1, 3, 4, &[1.0], 1, 1, 1, 0);
        assert_eq!(out, input);
    }

    #[test]
    fn conv2d_matches_brute_force_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (c_in, h, w, c_out, k, stride, pad) = (2, 5, 6, 3, 3, 2, 1);
        let input: Vec<f64> = (0..c_in * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let weight: Vec<f64> = (0..c_out * c_in * k * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let got = conv2d(&input, c_in, h, w, &weight, c_out, k, stride, pad);
        let oh = spatial_out(h, k, stride, pad);
        let ow = spatial_out(w, k, stride, pad);
        for co in 0..c_out {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut want = 0.0;
                    for ci in 0..c_in {
                        for dy in 0..k {
                            for dx in 0..k {
                                let iy = (stride * oy + dy) as isize - pad as isize;
                                let ix = (stride * ox + dx) as isize - pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                    want += input[(ci * h + iy as usize) * w + ix as usize]
                                        * weight[((co * c_in + ci) * k + dy) * k + dx];
                                }
                            }
                        }
                    }
                    let got_v = got[(co * oh + oy) * ow + ox];
                    assert!((got_v - want).abs() <= 1e-12, "mismatch at {co},{oy},{ox}");
                }
            }
        }
    }
}
