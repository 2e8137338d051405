use std::path::Path;

use rand_distr::{Distribution, Normal};

use super::config::ModelConfig;
use super::layers::{decoder_block, encoder_block, layer_norm, linear, patchify, sinusoid, token_pixel_order, Bound};
use crate::error::{Error, Result};
use crate::events::EventVoxelGrid;
use crate::rng::SeedTree;
use crate::tensor::{read_checkpoint, write_checkpoint, Graph, ParamSet, Scalar, Tensor, Var};

/// Prefix of every interpolation-branch parameter.
pub const INTERP: &str = "interp.";

const INIT_STD: f64 = 0.02;

/// Which inputs the interpolation branch sees.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Variant {
    pub events: bool,
    pub time: bool,
}

impl Default for Variant {
    fn default() -> Self {
        Self {
            events: true,
            time: true,
        }
    }
}

/// Base model outputs on a tape: per view the decoder states (index 0 is
/// the encoder output) and head outputs in token-pixel order.
pub struct BaseVars<'g, T: Scalar> {
    pub hidden: [Vec<Var<'g, T>>; 2],
    pub points: [Var<'g, T>; 2],
    pub conf: [Var<'g, T>; 2],
}

/// Inputs of one interpolation direction, as channel-major images.
pub struct DirectionInputs<'a, T: Scalar> {
    /// `(3, H, W)` source pointmap divided by the source scale.
    pub points: &'a [T],
    /// `(1, H, W)` log confidence.
    pub log_conf: &'a [T],
    pub events: &'a EventVoxelGrid,
}

#[derive(Clone, Debug)]
pub struct Model<T: Scalar = f32> {
    pub config: ModelConfig,
    pub params: ParamSet<T>,
}

struct Init<'a, T: Scalar> {
    params: &'a mut ParamSet<T>,
    seeds: SeedTree,
}

impl<T: Scalar> Init<'_, T> {
    fn normal(&mut self, name: &str, shape: &[usize]) {
        let mut rng = self.seeds.split_str(name).rng();
        let dist = Normal::new(0.0, INIT_STD).expect("positive std");
        let t = Tensor::from_fn(shape, |_| T::lit(dist.sample(&mut rng)));
        self.params.insert(name, t);
    }

    fn zeros(&mut self, name: &str, shape: &[usize]) {
        self.params.insert(name, Tensor::zeros(shape));
    }

    fn linear(&mut self, name: &str, i: usize, o: usize) {
        self.normal(&format!("{name}.w"), &[i, o]);
        self.zeros(&format!("{name}.b"), &[o]);
    }

    fn norm(&mut self, name: &str, d: usize) {
        self.params.insert(format!("{name}.g"), Tensor::ones(&[d]));
        self.zeros(&format!("{name}.b"), &[d]);
    }

    fn attention(&mut self, name: &str, d: usize) {
        for part in ["q", "k", "v", "o"] {
            self.linear(&format!("{name}.{part}"), d, d);
        }
    }

    fn mlp(&mut self, name: &str, d: usize, r: usize) {
        self.linear(&format!("{name}.fc1"), d, d * r);
        self.linear(&format!("{name}.fc2"), d * r, d);
    }

    fn encoder(&mut self, name: &str, c: &ModelConfig, channels: usize) {
        let d = c.dim;
        self.linear(&format!("{name}.patch"), channels * c.patch * c.patch, d);
        self.normal(&format!("{name}.pos"), &[c.tokens(), d]);
        for b in 0..c.encoder_depth {
            let blk = format!("{name}.blk{b}");
            self.norm(&format!("{blk}.ln1"), d);
            self.attention(&format!("{blk}.attn"), d);
            self.norm(&format!("{blk}.ln2"), d);
            self.mlp(&format!("{blk}.mlp"), d, c.mlp_ratio);
        }
    }
}

pub fn patch_embed<'g, T: Scalar>(
    p: &Bound<'g, T>,
    c: &ModelConfig,
    name: &str,
    image: &[T],
    channels: usize,
) -> Result<Var<'g, T>> {
    if image.len() != channels * c.pixels() {
        return Err(Error::shape(
            "patch_embed",
            format!("{} values for {channels}x{}x{}", image.len(), c.height, c.width),
        ));
    }
    let x = p.tape.constant(patchify(image, channels, c.height, c.width, c.patch));
    linear(p, x, &format!("{name}.patch"))?.add(p.get(&format!("{name}.pos"))?)
}

/// Encoder outputs after every block; `name` selects the weights.
pub fn encode_modality<'g, T: Scalar>(
    p: &Bound<'g, T>,
    c: &ModelConfig,
    name: &str,
    image: &[T],
    channels: usize,
) -> Result<Vec<Var<'g, T>>> {
    let mut x = patch_embed(p, c, name, image, channels)?;
    let mut levels = Vec::with_capacity(c.encoder_depth);
    for b in 0..c.encoder_depth {
        x = encoder_block(p, x, &format!("{name}.blk{b}"), c.heads)?;
        levels.push(x);
    }
    Ok(levels)
}

impl<T: Scalar> Model<T> {
    /// Randomly initialized base (pairwise) model.
    pub fn new_base(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new();
        let mut init = Init {
            params: &mut params,
            seeds: SeedTree::new(config.seed).split_str("base"),
        };
        let (d, r) = (config.dim, config.mlp_ratio);
        init.encoder("frame", &config, 1);
        for v in 0..2 {
            for l in 0..config.decoder_depth {
                let blk = format!("dec{v}.blk{l}");
                init.norm(&format!("{blk}.ln1"), d);
                init.attention(&format!("{blk}.self"), d);
                init.norm(&format!("{blk}.ln2"), d);
                init.norm(&format!("{blk}.lny"), d);
                init.attention(&format!("{blk}.cross"), d);
                init.norm(&format!("{blk}.ln3"), d);
                init.mlp(&format!("{blk}.mlp"), d, r);
            }
            init.norm(&format!("dec{v}.ln"), d);
            init.linear(&format!("head{v}"), d, config.patch * config.patch * 4);
        }
        Ok(Self { config, params })
    }

    pub fn has_interp(&self) -> bool {
        self.params.names().iter().any(|n| n.starts_with(INTERP))
    }

    /// Adds the interpolation branch: fresh modality encoders and time
    /// MLP, zero-initialized injections and head modulation, and decoder
    /// and head weights copied from the base model.
    pub fn add_interp_branch(&mut self) -> Result<()> {
        if self.has_interp() {
            return Err(Error::InvalidInput("model already has an interpolation branch".into()));
        }
        let c = self.config.clone();
        let copies: Vec<(String, Tensor<T>)> = self
            .params
            .iter()
            .filter(|(n, _)| n.starts_with("dec") || n.starts_with("head"))
            .map(|(n, t)| (format!("{INTERP}{n}"), t.clone()))
            .collect();
        let mut init = Init {
            params: &mut self.params,
            seeds: SeedTree::new(c.seed).split_str("interp"),
        };
        init.encoder("interp.enc_x", &c, 3);
        init.encoder("interp.enc_c", &c, 1);
        init.encoder("interp.enc_e", &c, c.bins);
        init.linear("interp.time.fc1", 2 * c.time_freqs, c.dim);
        init.linear("interp.time.fc2", c.dim, c.dim);
        for v in 0..2 {
            for l in 0..c.decoder_depth {
                init.zeros(&format!("interp.zero{v}.{l}.w"), &[c.dim, c.dim]);
                init.zeros(&format!("interp.zero{v}.{l}.b"), &[c.dim]);
            }
            init.zeros(&format!("interp.film{v}.w"), &[c.dim, 2 * c.dim]);
            init.zeros(&format!("interp.film{v}.b"), &[2 * c.dim]);
        }
        for (n, t) in copies {
            self.params.insert(n, t);
        }
        Ok(())
    }

    pub fn is_base_param(name: &str) -> bool {
        !name.starts_with(INTERP)
    }

    /// Base forward on a tape. `frames` are intensities in `[0, 1]`.
    pub fn base_graph<'g>(&self, p: &Bound<'g, T>, frames: [&[f32]; 2]) -> Result<BaseVars<'g, T>> {
        let c = &self.config;
        let mut tokens = Vec::with_capacity(2);
        for f in frames {
            let img: Vec<T> = f.iter().map(|&v| T::lit((v as f64 - 0.5) * 2.0)).collect();
            let levels = encode_modality(p, c, "frame", &img, 1)?;
            tokens.push(*levels.last().expect("encoder depth > 0"));
        }
        let mut hidden = [vec![tokens[0]], vec![tokens[1]]];
        for l in 0..c.decoder_depth {
            let (h0, h1) = (hidden[0][l], hidden[1][l]);
            let n0 = decoder_block(p, h0, h1, &format!("dec0.blk{l}"), c.heads)?;
            let n1 = decoder_block(p, h1, h0, &format!("dec1.blk{l}"), c.heads)?;
            hidden[0].push(n0);
            hidden[1].push(n1);
        }
        let (x0, c0) = self.head(p, hidden[0][c.decoder_depth], "dec0.ln", "head0", None)?;
        let (x1, c1) = self.head(p, hidden[1][c.decoder_depth], "dec1.ln", "head1", None)?;
        Ok(BaseVars {
            hidden,
            points: [x0, x1],
            conf: [c0, c1],
        })
    }

    /// `(points, confidence)` in token-pixel order: `(HW, 3)` and `(HW, 1)`.
    fn head<'g>(
        &self,
        p: &Bound<'g, T>,
        h: Var<'g, T>,
        norm: &str,
        head: &str,
        film: Option<(Var<'g, T>, Var<'g, T>)>,
    ) -> Result<(Var<'g, T>, Var<'g, T>)> {
        let mut n = layer_norm(p, h, norm)?;
        if let Some((gamma, beta)) = film {
            n = n.mul_channels(gamma.add_const(T::one()))?.add_bias(beta)?;
        }
        let out = linear(p, n, head)?.reshape(&[self.config.pixels(), 4])?;
        let points = out.slice(1, 0, 3)?;
        let conf = out.slice(1, 3, 4)?.exp().add_const(T::one());
        Ok((points, conf))
    }

    /// Interpolation forward for both directions on a tape. Direction `v`
    /// runs the copy of base decoder `v`, cross-attending to the frozen
    /// base states of the other view.
    pub fn interp_graph<'g>(
        &self,
        p: &Bound<'g, T>,
        base: &BaseVars<'g, T>,
        inputs: [&DirectionInputs<'_, T>; 2],
        tau: f64,
        variant: Variant,
    ) -> Result<[(Var<'g, T>, Var<'g, T>); 2]> {
        let c = &self.config;
        if !(0.0..=1.0).contains(&tau) {
            return Err(Error::InvalidInput(format!("target time {tau} outside [0, 1]")));
        }
        let time = if variant.time {
            let s = p.tape.constant(sinusoid(tau, c.time_freqs));
            let h = linear(p, s, "interp.time.fc1")?.gelu();
            Some(linear(p, h, "interp.time.fc2")?.gelu())
        } else {
            None
        };
        let mut out = Vec::with_capacity(2);
        for (v, inp) in inputs.iter().enumerate() {
            let ev = inp.events;
            if (ev.bins, ev.height, ev.width) != (c.bins, c.height, c.width) {
                return Err(Error::shape(
                    "forward_interp",
                    format!(
                        "voxel grid {}x{}x{}, model expects {}x{}x{}",
                        ev.bins, ev.height, ev.width, c.bins, c.height, c.width
                    ),
                ));
            }
            let fx = encode_modality(p, c, "interp.enc_x", inp.points, 3)?;
            let fc = encode_modality(p, c, "interp.enc_c", inp.log_conf, 1)?;
            let fe = if variant.events {
                let data: Vec<T> = ev.data.iter().map(|&e| T::lit(e as f64)).collect();
                Some(encode_modality(p, c, "interp.enc_e", &data, c.bins)?)
            } else {
                None
            };
            let mut h = base.hidden[v][0];
            for l in 0..c.decoder_depth {
                let other = base.hidden[1 - v][l];
                h = decoder_block(p, h, other, &format!("interp.dec{v}.blk{l}"), c.heads)?;
                let level = l * c.encoder_depth / c.decoder_depth;
                let mut f = fx[level].add(fc[level])?;
                if let Some(fe) = &fe {
                    f = f.add(fe[level])?;
                }
                h = h.add(linear(p, f, &format!("interp.zero{v}.{l}"))?)?;
            }
            let film = match time {
                Some(t) => {
                    let g = linear(p, t, &format!("interp.film{v}"))?;
                    let gamma = g.slice(1, 0, c.dim)?.reshape(&[c.dim])?;
                    let beta = g.slice(1, c.dim, 2 * c.dim)?.reshape(&[c.dim])?;
                    Some((gamma, beta))
                }
                None => None,
            };
            out.push(self.head(p, h, &format!("interp.dec{v}.ln"), &format!("interp.head{v}"), film)?);
        }
        Ok([out[0], out[1]])
    }

    /// Time-encoding features fed to the head modulation.
    pub fn time_embedding(&self, tau: f64) -> Result<Vec<T>> {
        let tape = Graph::new();
        let p = Bound::new(&tape, &self.params, |_| false);
        let s = tape.constant(sinusoid(tau, self.config.time_freqs));
        let h = linear(&p, s, "interp.time.fc1")?.gelu();
        Ok(linear(&p, h, "interp.time.fc2")?.gelu().value().data().to_vec())
    }

    pub fn pixel_order(&self) -> Vec<usize> {
        token_pixel_order(self.config.height, self.config.width, self.config.patch)
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        let mut params = ParamSet::new();
        for (n, t) in self.params.iter() {
            params.insert(n, t.cast());
        }
        Model {
            config: self.config.clone(),
            params,
        }
    }
}

impl Model<f32> {
    /// Writes parameters to `path` and the configuration next to it as
    /// JSON (same stem, `.json`).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        write_checkpoint(path, &self.params)?;
        let cfg = path.with_extension("json");
        let text = serde_json::to_string_pretty(&self.config)
            .map_err(|e| Error::InvalidInput(format!("serializing model config: {e}")))?;
        std::fs::write(&cfg, text).map_err(|e| Error::io(&cfg, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let cfg = path.with_extension("json");
        let text = std::fs::read_to_string(&cfg).map_err(|e| Error::io(&cfg, e))?;
        let config: ModelConfig = serde_json::from_str(&text).map_err(|e| Error::Format {
            offset: e.column() as u64,
            detail: format!("{}: {e}", cfg.display()),
        })?;
        config.validate()?;
        Ok(Self {
            config,
            params: read_checkpoint(path)?,
        })
    }
}
