//! Encoder forward and backward passes.
//!
//! Trunk: 7x7/2 conv + BN + ReLU, 3x3/2 max-pool, then stages of bottleneck
//! blocks (1x1 reduce, 3x3, 1x1 expand, each with BN; identity or projection
//! shortcut). Every tap is max-pooled over frequency so each time column is a
//! `C`-dimensional descriptor, aggregated by VLAD or flattened, passed through
//! the shared FC layer, averaged over taps, then ReLU and the classifier.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::{EncoderConfig, HIERARCHICAL_TAPS};
use crate::error::{Error, Result};
use crate::nn::batchnorm::BatchNormCache;
use crate::nn::init::{he_uniform, uniform};
use crate::nn::{
    batchnorm2d, batchnorm2d_backward, conv2d, conv2d_backward, linear, linear_backward,
    maxpool2d, maxpool2d_backward, relu, relu_backward, Conv2dSpec, Mode, ParamStore, Pool2dSpec,
    Tensor,
};
use crate::scalar::Scalar;
use crate::vlad::{kmeans, netvlad_aggregate, netvlad_backward, VladCache, VladOptions, VladParams};

const KMEANS_ITERS: usize = 10;

#[derive(Debug, Clone)]
struct BlockSpec {
    name: String,
    c_in: usize,
    mid: usize,
    c_out: usize,
    stride: usize,
    proj: bool,
}

fn block_specs(cfg: &EncoderConfig) -> Vec<Vec<BlockSpec>> {
    let mut c_in = cfg.trunk_channels[0];
    let mut stages = Vec::with_capacity(cfg.stage_depths.len());
    for (s, (&c_out, &depth)) in cfg.trunk_channels.iter().zip(&cfg.stage_depths).enumerate() {
        let mut blocks = Vec::with_capacity(depth);
        for b in 0..depth {
            let stride = if s > 0 && b == 0 { 2 } else { 1 };
            blocks.push(BlockSpec {
                name: format!("stage{s}.block{b}"),
                c_in,
                mid: (c_out / 4).max(1),
                c_out,
                stride,
                proj: stride != 1 || c_in != c_out,
            });
            c_in = c_out;
        }
        stages.push(blocks);
    }
    stages
}

fn conv_out(n: usize, k: usize, s: usize, p: usize) -> usize {
    (n + 2 * p - k) / s + 1
}

/// Spatial size `(H', W')` of the last trunk stage for the configured input.
pub fn trunk_output_dims(cfg: &EncoderConfig) -> (usize, usize) {
    let mut h = conv_out(conv_out(cfg.input_bins, 7, 2, 3), 3, 2, 1);
    let mut w = conv_out(conv_out(cfg.input_frames, 7, 2, 3), 3, 2, 1);
    for _ in 1..cfg.stage_depths.len() {
        h = conv_out(h, 3, 2, 1);
        w = conv_out(w, 3, 2, 1);
    }
    (h, w)
}

/// Length of one tap's aggregated vector, the shared FC input size.
pub fn aggregate_dim(cfg: &EncoderConfig) -> usize {
    let c = *cfg.trunk_channels.last().expect("validated config");
    if cfg.variant.uses_vlad() {
        cfg.clusters * c
    } else {
        c * trunk_output_dims(cfg).1
    }
}

/// Elementwise mean of the per-tap shared-FC outputs.
pub fn hvlad_combine<T: Scalar>(taps: &[Tensor<T>]) -> Result<Tensor<T>> {
    if taps.len() != HIERARCHICAL_TAPS {
        return Err(Error::MissingTap {
            expected: HIERARCHICAL_TAPS,
            got: taps.len(),
        });
    }
    mean_of(taps)
}

fn mean_of<T: Scalar>(taps: &[Tensor<T>]) -> Result<Tensor<T>> {
    let mut acc = taps[0].clone();
    for t in &taps[1..] {
        acc.add_assign(t)?;
    }
    let inv = T::one() / T::from_usize_lossy(taps.len());
    Ok(acc.map(|v| v * inv))
}

/// Trainable parameters plus batch-norm running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub config: EncoderConfig,
    pub params: ParamStore<T>,
    pub buffers: ParamStore<T>,
}

/// Builds a model with deterministic initial weights.
pub fn build_encoder<T: Scalar>(cfg: &EncoderConfig, seed: u64) -> Result<ModelParams<T>> {
    cfg.validate()?;
    let (h, w) = trunk_output_dims(cfg);
    if h == 0 || w == 0 {
        return Err(Error::InvalidConfig(format!(
            "input {}x{} too small for the trunk",
            cfg.input_bins, cfg.input_frames
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamStore::new();
    let mut buffers = ParamStore::new();
    let mut unit = |name: &str, c_in: usize, c_out: usize, k: usize, rng: &mut ChaCha8Rng| -> Result<()> {
        params.insert(
            format!("{name}.conv.weight"),
            he_uniform(&[c_out, c_in, k, k], c_in * k * k, rng),
        )?;
        params.insert(format!("{name}.bn.gamma"), Tensor::filled(&[c_out], T::one()))?;
        params.insert(format!("{name}.bn.beta"), Tensor::zeros(&[c_out]))?;
        buffers.insert(format!("{name}.bn.running_mean"), Tensor::zeros(&[c_out]))?;
        buffers.insert(format!("{name}.bn.running_var"), Tensor::filled(&[c_out], T::one()))?;
        Ok(())
    };
    unit("stem", 1, cfg.trunk_channels[0], 7, &mut rng)?;
    for stage in block_specs(cfg) {
        for b in stage {
            unit(&format!("{}.unit1", b.name), b.c_in, b.mid, 1, &mut rng)?;
            unit(&format!("{}.unit2", b.name), b.mid, b.mid, 3, &mut rng)?;
            unit(&format!("{}.unit3", b.name), b.mid, b.c_out, 1, &mut rng)?;
            if b.proj {
                unit(&format!("{}.proj", b.name), b.c_in, b.c_out, 1, &mut rng)?;
            }
        }
    }
    let d = *cfg.trunk_channels.last().unwrap();
    if cfg.variant.uses_vlad() {
        for t in 0..cfg.n_taps() {
            let c = uniform::<T, _>(&[cfg.clusters, d], 1.0, &mut rng).map(|v: T| v.abs());
            let vp = VladParams::from_centroids(c, 1.0)?;
            params.insert(format!("vlad{t}.centroids"), vp.centroids)?;
            params.insert(format!("vlad{t}.W_a"), vp.assign_w)?;
            params.insert(format!("vlad{t}.b_a"), vp.assign_b)?;
        }
    }
    let agg = aggregate_dim(cfg);
    let fc_bound = 1.0 / (agg as f64).sqrt();
    params.insert("fc.weight", uniform(&[cfg.embed_dim, agg], fc_bound, &mut rng))?;
    params.insert("fc.bias", Tensor::zeros(&[cfg.embed_dim]))?;
    let cls_bound = 1.0 / (cfg.embed_dim as f64).sqrt();
    params.insert(
        "classifier.weight",
        uniform(&[cfg.n_classes, cfg.embed_dim], cls_bound, &mut rng),
    )?;
    params.insert("classifier.bias", Tensor::zeros(&[cfg.n_classes]))?;
    Ok(ModelParams {
        config: cfg.clone(),
        params,
        buffers,
    })
}

#[derive(Debug, Clone)]
struct ConvBnCache<T> {
    name: String,
    spec: Conv2dSpec,
    x: Tensor<T>,
    bn: BatchNormCache<T>,
    /// Post-ReLU output, kept only for units followed by a ReLU.
    out: Option<Tensor<T>>,
}

#[derive(Debug, Clone)]
struct BlockCache<T> {
    units: [ConvBnCache<T>; 3],
    proj: Option<ConvBnCache<T>>,
    out: Tensor<T>,
}

#[derive(Debug, Clone)]
struct HeadCache<T> {
    feature_shape: Vec<usize>,
    argmax: Vec<usize>,
    /// Per-sample `[W', C]` descriptors and VLAD caches (VLAD variants only).
    descriptors: Vec<Tensor<T>>,
    vlad: Vec<VladCache<T>>,
    z: Tensor<T>,
}

/// Intermediate values of one forward pass, consumed by [`ModelParams::backward`].
#[derive(Debug, Clone)]
pub struct Tape<T> {
    mode: Mode,
    stem: ConvBnCache<T>,
    pool_in_shape: Vec<usize>,
    pool_argmax: Vec<usize>,
    blocks: Vec<Vec<BlockCache<T>>>,
    heads: Vec<HeadCache<T>>,
    hidden: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput<T> {
    pub logits: Tensor<T>,
    pub tape: Tape<T>,
    /// Updated running statistics (train mode only); apply with
    /// [`ModelParams::commit_running`].
    pub running: ParamStore<T>,
}

struct Trunk<T> {
    stem: ConvBnCache<T>,
    pool_in_shape: Vec<usize>,
    pool_argmax: Vec<usize>,
    blocks: Vec<Vec<BlockCache<T>>>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn num_trainable(&self) -> usize {
        self.params.num_elements()
    }

    /// Number of distinct VLAD parameter sets.
    pub fn vlad_tap_count(&self) -> usize {
        (0..)
            .take_while(|t| self.params.contains(&format!("vlad{t}.centroids")))
            .count()
    }

    pub fn vlad(&self, tap: usize) -> Result<VladParams<T>> {
        VladParams::new(
            self.params.get(&format!("vlad{tap}.centroids"))?.clone(),
            self.params.get(&format!("vlad{tap}.W_a"))?.clone(),
            self.params.get(&format!("vlad{tap}.b_a"))?.clone(),
        )
    }

    pub fn set_vlad(&mut self, tap: usize, vp: VladParams<T>) -> Result<()> {
        self.params.set(&format!("vlad{tap}.centroids"), vp.centroids)?;
        self.params.set(&format!("vlad{tap}.W_a"), vp.assign_w)?;
        self.params.set(&format!("vlad{tap}.b_a"), vp.assign_b)
    }

    pub fn commit_running(&mut self, running: ParamStore<T>) -> Result<()> {
        for (name, t) in running.iter() {
            self.buffers.set(name, t.clone())?;
        }
        Ok(())
    }

    fn vlad_opts(&self) -> VladOptions {
        VladOptions {
            intra_norm: self.config.intra_norm,
            ..VladOptions::default()
        }
    }

    fn conv_bn(
        &self,
        name: &str,
        x: &Tensor<T>,
        spec: Conv2dSpec,
        with_relu: bool,
        mode: Mode,
        running: &mut ParamStore<T>,
    ) -> Result<(Tensor<T>, ConvBnCache<T>)> {
        let h = conv2d(x, self.params.get(&format!("{name}.conv.weight"))?, None, spec)?;
        let bn = batchnorm2d(
            &h,
            self.params.get(&format!("{name}.bn.gamma"))?,
            self.params.get(&format!("{name}.bn.beta"))?,
            self.buffers.get(&format!("{name}.bn.running_mean"))?,
            self.buffers.get(&format!("{name}.bn.running_var"))?,
            mode,
        )?;
        if let Some((rm, rv)) = bn.running {
            running.insert(format!("{name}.bn.running_mean"), rm)?;
            running.insert(format!("{name}.bn.running_var"), rv)?;
        }
        let (y, out) = if with_relu {
            let y = relu(&bn.y);
            (y.clone(), Some(y))
        } else {
            (bn.y, None)
        };
        Ok((
            y,
            ConvBnCache {
                name: name.to_string(),
                spec,
                x: x.clone(),
                bn: bn.cache,
                out,
            },
        ))
    }

    fn conv_bn_backward(
        &self,
        cache: &ConvBnCache<T>,
        mode: Mode,
        dy: &Tensor<T>,
        grads: &mut ParamStore<T>,
    ) -> Result<Tensor<T>> {
        let name = &cache.name;
        let dy = match &cache.out {
            Some(out) => relu_backward(out, dy)?,
            None => dy.clone(),
        };
        let gamma_name = format!("{name}.bn.gamma");
        let g = batchnorm2d_backward(&cache.bn, self.params.get(&gamma_name)?, mode, &dy)?;
        grads.accumulate(&gamma_name, &g.dgamma)?;
        grads.accumulate(&format!("{name}.bn.beta"), &g.dbeta)?;
        let w_name = format!("{name}.conv.weight");
        let cg = conv2d_backward(&cache.x, self.params.get(&w_name)?, false, cache.spec, &g.dx)?;
        grads.accumulate(&w_name, &cg.dw)?;
        Ok(cg.dx)
    }

    fn trunk(&self, x: &Tensor<T>, mode: Mode, running: &mut ParamStore<T>) -> Result<Trunk<T>> {
        let (_, c, h, w) = x.dims4()?;
        let cfg = &self.config;
        if c != 1 || h != cfg.input_bins || w != cfg.input_frames {
            return Err(Error::shape(format!(
                "input {:?}, expected [B, 1, {}, {}]",
                x.shape(),
                cfg.input_bins,
                cfg.input_frames
            )));
        }
        let (stem_out, stem) = self.conv_bn("stem", x, Conv2dSpec::new(2, 3), true, mode, running)?;
        let pool = maxpool2d(&stem_out, Pool2dSpec::square(3, 2, 1))?;
        let mut cur = pool.y;
        let mut blocks = Vec::new();
        for stage in block_specs(cfg) {
            let mut caches = Vec::with_capacity(stage.len());
            for b in &stage {
                let (h1, u1) =
                    self.conv_bn(&format!("{}.unit1", b.name), &cur, Conv2dSpec::new(1, 0), true, mode, running)?;
                let (h2, u2) = self.conv_bn(
                    &format!("{}.unit2", b.name),
                    &h1,
                    Conv2dSpec::new(b.stride, 1),
                    true,
                    mode,
                    running,
                )?;
                let (mut h3, u3) =
                    self.conv_bn(&format!("{}.unit3", b.name), &h2, Conv2dSpec::new(1, 0), false, mode, running)?;
                let proj = if b.proj {
                    let (s, pc) = self.conv_bn(
                        &format!("{}.proj", b.name),
                        &cur,
                        Conv2dSpec::new(b.stride, 0),
                        false,
                        mode,
                        running,
                    )?;
                    h3.add_assign(&s)?;
                    Some(pc)
                } else {
                    h3.add_assign(&cur)?;
                    None
                };
                let out = relu(&h3);
                cur = out.clone();
                caches.push(BlockCache {
                    units: [u1, u2, u3],
                    proj,
                    out,
                });
            }
            blocks.push(caches);
        }
        Ok(Trunk {
            stem,
            pool_in_shape: stem_out.shape().to_vec(),
            pool_argmax: pool.argmax,
            blocks,
        })
    }

    /// Feature maps feeding the aggregation heads, in tap order.
    fn taps<'a>(&self, blocks: &'a [Vec<BlockCache<T>>]) -> Vec<&'a Tensor<T>> {
        let last = blocks.last().expect("at least one stage");
        if self.config.variant.is_hierarchical() {
            last.iter().map(|b| &b.out).collect()
        } else {
            vec![&last.last().expect("non-empty stage").out]
        }
    }

    fn head(&self, tap: usize, f: &Tensor<T>) -> Result<HeadCache<T>> {
        let (b, c, h, w) = f.dims4()?;
        let pool = maxpool2d(
            f,
            Pool2dSpec {
                kernel: (h, 1),
                stride: (h, 1),
                pad: (0, 0),
            },
        )?;
        if !self.config.variant.uses_vlad() {
            return Ok(HeadCache {
                feature_shape: f.shape().to_vec(),
                argmax: pool.argmax,
                descriptors: Vec::new(),
                vlad: Vec::new(),
                z: pool.y.reshape(&[b, c * w])?,
            });
        }
        let vp = self.vlad(tap)?;
        let opts = self.vlad_opts();
        let per_sample: Vec<(Tensor<T>, Tensor<T>, VladCache<T>)> = pool
            .y
            .data()
            .par_chunks(c * w)
            .map(|cw| {
                let desc = Tensor::from_vec(&[w, c], transpose(cw, c, w))?;
                let (v, cache) = netvlad_aggregate(&desc, &vp, opts)?;
                Ok((desc, v, cache))
            })
            .collect::<Result<_>>()?;
        let k_d = vp.clusters() * c;
        let mut z = Vec::with_capacity(b * k_d);
        let mut descriptors = Vec::with_capacity(b);
        let mut vlad = Vec::with_capacity(b);
        for (desc, v, cache) in per_sample {
            z.extend_from_slice(v.data());
            descriptors.push(desc);
            vlad.push(cache);
        }
        Ok(HeadCache {
            feature_shape: f.shape().to_vec(),
            argmax: pool.argmax,
            descriptors,
            vlad,
            z: Tensor::from_vec(&[b, k_d], z)?,
        })
    }

    fn embed(&self, features: &[&Tensor<T>]) -> Result<(Vec<HeadCache<T>>, Tensor<T>)> {
        let mut heads = Vec::with_capacity(features.len());
        let mut taps = Vec::with_capacity(features.len());
        let (fw, fb) = (self.params.get("fc.weight")?, self.params.get("fc.bias")?);
        for (t, f) in features.iter().enumerate() {
            let head = self.head(t, f)?;
            taps.push(linear(&head.z, fw, fb)?);
            heads.push(head);
        }
        let combined = if self.config.variant.is_hierarchical() {
            hvlad_combine(&taps)?
        } else {
            mean_of(&taps)?
        };
        Ok((heads, relu(&combined)))
    }

    /// Aggregation and shared FC applied directly to trunk-shaped feature
    /// maps `[B, C, H', W']`, one per tap; returns the post-ReLU embedding.
    pub fn aggregate_embedding(&self, features: &[Tensor<T>]) -> Result<Tensor<T>> {
        if features.len() != self.config.n_taps() {
            return Err(Error::MissingTap {
                expected: self.config.n_taps(),
                got: features.len(),
            });
        }
        let refs: Vec<&Tensor<T>> = features.iter().collect();
        Ok(self.embed(&refs)?.1)
    }

    /// `x: [B, 1, n_bins, n_frames]` to logits `[B, n_classes]`.
    pub fn forward(&self, x: &Tensor<T>, mode: Mode) -> Result<ForwardOutput<T>> {
        let mut running = ParamStore::new();
        let trunk = self.trunk(x, mode, &mut running)?;
        let (heads, hidden) = self.embed(&self.taps(&trunk.blocks))?;
        let logits = linear(
            &hidden,
            self.params.get("classifier.weight")?,
            self.params.get("classifier.bias")?,
        )?;
        Ok(ForwardOutput {
            logits,
            tape: Tape {
                mode,
                stem: trunk.stem,
                pool_in_shape: trunk.pool_in_shape,
                pool_argmax: trunk.pool_argmax,
                blocks: trunk.blocks,
                heads,
                hidden,
            },
            running,
        })
    }

    /// Eval-mode logits.
    pub fn logits(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward(x, Mode::Eval)?.logits)
    }

    /// Gradients of every trainable parameter given `dL/dlogits`.
    pub fn backward(&self, tape: &Tape<T>, dlogits: &Tensor<T>) -> Result<ParamStore<T>> {
        let mut grads = self.params.zeros_like();
        let cw = self.params.get("classifier.weight")?;
        let lg = linear_backward(&tape.hidden, cw, dlogits)?;
        grads.accumulate("classifier.weight", &lg.dw)?;
        grads.accumulate("classifier.bias", &lg.db)?;
        let dmean = relu_backward(&tape.hidden, &lg.dx)?;
        let inv = T::one() / T::from_usize_lossy(tape.heads.len());
        let de = dmean.map(|v| v * inv);
        let fw = self.params.get("fc.weight")?;
        let mut tap_grads = Vec::with_capacity(tape.heads.len());
        for (t, head) in tape.heads.iter().enumerate() {
            let fg = linear_backward(&head.z, fw, &de)?;
            grads.accumulate("fc.weight", &fg.dw)?;
            grads.accumulate("fc.bias", &fg.db)?;
            tap_grads.push(self.head_backward(t, head, &fg.dx, &mut grads)?);
        }

        let hierarchical = self.config.variant.is_hierarchical();
        let n_stages = tape.blocks.len();
        let mut dcur: Option<Tensor<T>> = None;
        let mut tap_grads = tap_grads.into_iter().rev();
        for (s, stage) in tape.blocks.iter().enumerate().rev() {
            for (b, block) in stage.iter().enumerate().rev() {
                let is_last = s == n_stages - 1 && b == stage.len() - 1;
                if s == n_stages - 1 && (hierarchical || is_last) {
                    let g = tap_grads.next().expect("one gradient per tap");
                    dcur = Some(match dcur {
                        Some(mut d) => {
                            d.add_assign(&g)?;
                            d
                        }
                        None => g,
                    });
                }
                let dout = dcur.take().expect("gradient reaches every block");
                dcur = Some(self.block_backward(block, tape.mode, &dout, &mut grads)?);
            }
        }
        let dpool = dcur.expect("trunk has blocks");
        let dstem = maxpool2d_backward(&tape.pool_in_shape, &tape.pool_argmax, &dpool)?;
        self.conv_bn_backward(&tape.stem, tape.mode, &dstem, &mut grads)?;
        Ok(grads)
    }

    fn block_backward(
        &self,
        block: &BlockCache<T>,
        mode: Mode,
        dout: &Tensor<T>,
        grads: &mut ParamStore<T>,
    ) -> Result<Tensor<T>> {
        let dsum = relu_backward(&block.out, dout)?;
        let d2 = self.conv_bn_backward(&block.units[2], mode, &dsum, grads)?;
        let d1 = self.conv_bn_backward(&block.units[1], mode, &d2, grads)?;
        let mut dx = self.conv_bn_backward(&block.units[0], mode, &d1, grads)?;
        match &block.proj {
            Some(p) => dx.add_assign(&self.conv_bn_backward(p, mode, &dsum, grads)?)?,
            None => dx.add_assign(&dsum)?,
        }
        Ok(dx)
    }

    fn head_backward(
        &self,
        tap: usize,
        head: &HeadCache<T>,
        dz: &Tensor<T>,
        grads: &mut ParamStore<T>,
    ) -> Result<Tensor<T>> {
        let (b, c, _, w) = (
            head.feature_shape[0],
            head.feature_shape[1],
            head.feature_shape[2],
            head.feature_shape[3],
        );
        let dpooled = if self.config.variant.uses_vlad() {
            let vp = self.vlad(tap)?;
            let opts = self.vlad_opts();
            let k_d = vp.clusters() * c;
            let per_sample: Vec<_> = dz
                .data()
                .par_chunks(k_d)
                .zip(head.descriptors.par_iter().zip(&head.vlad))
                .map(|(dv, (desc, cache))| {
                    netvlad_backward(desc, &vp, opts, cache, &Tensor::from_vec(&[k_d], dv.to_vec())?)
                })
                .collect::<Result<_>>()?;
            let mut dp = Vec::with_capacity(b * c * w);
            let prefix = format!("vlad{tap}");
            for g in per_sample {
                dp.extend(transpose(g.dx.data(), w, c));
                grads.accumulate(&format!("{prefix}.centroids"), &g.params.centroids)?;
                grads.accumulate(&format!("{prefix}.W_a"), &g.params.assign_w)?;
                grads.accumulate(&format!("{prefix}.b_a"), &g.params.assign_b)?;
            }
            Tensor::from_vec(&[b, c, 1, w], dp)?
        } else {
            dz.clone().reshape(&[b, c, 1, w])?
        };
        maxpool2d_backward(&head.feature_shape, &head.argmax, &dpooled)
    }

    /// Re-initialises every VLAD layer by k-means over the descriptors the
    /// current trunk produces for `x` (train-mode statistics, running
    /// averages untouched). Assignment sharpness is `vlad_sharpness` divided
    /// by the mean squared distance to the nearest centroid.
    pub fn init_vlad_from_batch<R: Rng + ?Sized>(&mut self, x: &Tensor<T>, rng: &mut R) -> Result<()> {
        if !self.config.variant.uses_vlad() {
            return Ok(());
        }
        let mut scratch = ParamStore::new();
        let trunk = self.trunk(x, Mode::Train, &mut scratch)?;
        let fitted: Vec<VladParams<T>> = self
            .taps(&trunk.blocks)
            .into_iter()
            .map(|f| {
                let (b, c, h, w) = f.dims4()?;
                let pool = maxpool2d(
                    f,
                    Pool2dSpec {
                        kernel: (h, 1),
                        stride: (h, 1),
                        pad: (0, 0),
                    },
                )?;
                let mut desc = Vec::with_capacity(b * w * c);
                for cw in pool.y.data().chunks(c * w) {
                    desc.extend(transpose(cw, c, w));
                }
                let desc = Tensor::from_vec(&[b * w, c], desc)?;
                let centroids = kmeans(&desc, self.config.clusters, KMEANS_ITERS, rng)?;
                let mut total = 0.0;
                for xi in desc.data().chunks(c) {
                    let best = centroids
                        .data()
                        .chunks(c)
                        .map(|ck| xi.iter().zip(ck).map(|(&a, &b)| (a - b).as_f64().powi(2)).sum::<f64>())
                        .fold(f64::INFINITY, f64::min);
                    total += best;
                }
                let mean = (total / (b * w) as f64).max(1e-6);
                VladParams::from_centroids(centroids, self.config.vlad_sharpness / mean)
            })
            .collect::<Result<_>>()?;
        for (t, vp) in fitted.into_iter().enumerate() {
            self.set_vlad(t, vp)?;
        }
        Ok(())
    }

    /// All tensors (parameters then buffers) for checkpointing.
    pub fn to_store(&self) -> Result<ParamStore<T>> {
        let mut all = self.params.clone();
        for (name, t) in self.buffers.iter() {
            all.insert(name, t.clone())?;
        }
        Ok(all)
    }

    /// Loads tensors written by [`Self::to_store`] into a model built from
    /// `config`; any missing, extra or reshaped tensor is a configuration mismatch.
    pub fn from_store(config: &EncoderConfig, store: &ParamStore<T>) -> Result<Self> {
        let mut model = build_encoder::<T>(config, 0)?;
        let expected = model.params.len() + model.buffers.len();
        if store.len() != expected {
            return Err(Error::ConfigMismatch(format!(
                "checkpoint has {} tensors, configuration expects {expected}",
                store.len()
            )));
        }
        for (name, t) in store.iter() {
            let target = if model.params.contains(name) {
                &mut model.params
            } else if model.buffers.contains(name) {
                &mut model.buffers
            } else {
                return Err(Error::ConfigMismatch(format!("unexpected tensor {name}")));
            };
            target
                .set(name, t.clone())
                .map_err(|_| Error::ConfigMismatch(format!("tensor {name} has shape {:?}", t.shape())))?;
        }
        Ok(model)
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            config: self.config.clone(),
            params: self.params.cast(),
            buffers: self.buffers.cast(),
        }
    }
}

/// Row-major `[rows, cols]` to `[cols, rows]`.
fn transpose<T: Copy>(src: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(src.len());
    for j in 0..cols {
        for i in 0..rows {
            out.push(src[i * cols + j]);
        }
    }
    out
}
