use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::NetworkConfig;
use super::types::{AttentionMatrix, DescriptorMap, DistinctivenessMap, FeaturePyramid};
use crate::diffcore::{Graph, NodeId, ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Clone, Debug)]
struct ConvNorm {
    w: ParamId,
    gamma: ParamId,
    beta: ParamId,
}

#[derive(Clone, Debug)]
struct Mlp {
    w0: ParamId,
    b0: ParamId,
    w1: ParamId,
    b1: ParamId,
}

/// Attention projections for one scale: `own` maps the attending image's
/// features, `other` the attended image's.
#[derive(Clone, Debug)]
struct CoamParams {
    own: Mlp,
    other: Mlp,
}

#[derive(Clone, Debug)]
struct DistinctBlock {
    w: ParamId,
    scale: ParamId,
    shift: ParamId,
}

/// How an attention module projects raw features before comparing them.
#[derive(Clone, Copy, Debug)]
pub enum Projection<'a> {
    Identity,
    Learned {
        store: &'a ParamStore,
        net: &'a CoamNet,
        fine: bool,
    },
}

/// Graph handles of an encoded image.
#[derive(Clone, Copy, Debug)]
pub struct PyramidNodes {
    pub image: NodeId,
    pub skips: [NodeId; 2],
    pub f_l: NodeId,
    pub f_s: NodeId,
}

/// Graph handles of one conditioned pass (an image described given another).
#[derive(Clone, Copy, Debug)]
pub struct DirectionNodes {
    /// `[D, H, W]` decoder output before normalization.
    pub unnormalized: NodeId,
    /// `[H·W, D]` unit-norm descriptors.
    pub descriptors: NodeId,
    /// `[H·W]` distinctiveness scores.
    pub distinctiveness: NodeId,
    pub attention_fine: Option<NodeId>,
    pub attention_coarse: NodeId,
}

#[derive(Clone, Copy, Debug)]
pub struct PairNodes {
    pub first: DirectionNodes,
    pub second: DirectionNodes,
}

/// Inference result for an image pair.
#[derive(Clone, Debug)]
pub struct PairDescription {
    pub d1: DescriptorMap,
    pub r1: DistinctivenessMap,
    pub d2: DescriptorMap,
    pub r2: DistinctivenessMap,
    /// Attention of image 1's larger-scale map over image 2's (when enabled).
    pub attention_fine: Option<AttentionMatrix>,
    pub attention_coarse: AttentionMatrix,
}

/// Co-attention conditioned descriptor network. Holds parameter handles;
/// values live in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct CoamNet {
    config: NetworkConfig,
    encoder: Vec<ConvNorm>,
    coam_fine: Option<CoamParams>,
    coam_coarse: CoamParams,
    decoder: Vec<ConvNorm>,
    out_w: ParamId,
    out_b: ParamId,
    distinct: Vec<DistinctBlock>,
}

fn conv_norm(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, cin: usize, cout: usize) -> ConvNorm {
    ConvNorm {
        w: store.add_uniform(format!("{name}.conv.w"), &[cout, cin, 3, 3], cin * 9, rng),
        gamma: store.add(format!("{name}.norm.gamma"), Tensor::full(&[cout], 1.0)),
        beta: store.add(format!("{name}.norm.beta"), Tensor::zeros(&[cout])),
    }
}

fn mlp(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, cin: usize, cout: usize) -> Mlp {
    Mlp {
        w0: store.add_uniform(format!("{name}.0.w"), &[cout, cin], cin, rng),
        b0: store.add_uniform(format!("{name}.0.b"), &[cout], cin, rng),
        w1: store.add_uniform(format!("{name}.1.w"), &[cout, cout], cout, rng),
        b1: store.add_uniform(format!("{name}.1.b"), &[cout], cout, rng),
    }
}

/// `[C, h, w]` → `[h·w, C]`.
fn to_rows(g: &mut Graph, x: NodeId) -> Result<NodeId> {
    let s = g.shape(x).to_vec();
    let flat = g.reshape(x, &[s[0], s[1] * s[2]])?;
    g.transpose(flat)
}

/// `[h·w, C]` → `[C, h, w]`.
fn from_rows(g: &mut Graph, x: NodeId, h: usize, w: usize) -> Result<NodeId> {
    let c = g.shape(x)[1];
    let t = g.transpose(x)?;
    g.reshape(t, &[c, h, w])
}

/// Co-attention on flattened features: `A = softmax(g hᵀ)` row-wise and
/// `attended = A h`. Returns `(attended [n_g, P], A [n_g, n_h])`.
pub fn attend(g: &mut Graph, g_proj: NodeId, h_proj: NodeId) -> Result<(NodeId, NodeId)> {
    if g.shape(g_proj).len() != 2 || g.shape(h_proj).len() != 2 || g.shape(g_proj)[1] != g.shape(h_proj)[1] {
        return Err(Error::shape(
            "coattend",
            format!(
                "[_, P] and [_, P] with P = {}",
                g.shape(g_proj).get(1).copied().unwrap_or(0)
            ),
            format!("{:?} and {:?}", g.shape(g_proj), g.shape(h_proj)),
        ));
    }
    let ht = g.transpose(h_proj)?;
    let logits = g.matmul(g_proj, ht)?;
    let a = g.softmax(logits);
    let attended = g.matmul(a, h_proj)?;
    Ok((attended, a))
}

impl CoamNet {
    /// Creates parameters in `store`, initialized uniformly in
    /// `±1/sqrt(fan_in)` from `seed`.
    pub fn new(config: NetworkConfig, store: &mut ParamStore, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = &config.encoder_widths;
        let [pf, pc] = [config.projection_dims[0], config.projection_dims[1]];
        let mut encoder = Vec::new();
        let mut cin = 3;
        for (i, &cout) in w.iter().enumerate() {
            encoder.push(conv_norm(store, &mut rng, &format!("enc.{i}"), cin, cout));
            cin = cout;
        }
        let coam_fine = config.attends_fine().then(|| CoamParams {
            own: mlp(store, &mut rng, "coam.fine.own", w[2], pf),
            other: mlp(store, &mut rng, "coam.fine.other", w[2], pf),
        });
        let coam_coarse = CoamParams {
            own: mlp(store, &mut rng, "coam.coarse.own", w[3], pc),
            other: mlp(store, &mut rng, "coam.coarse.other", w[3], pc),
        };
        let fine_extra = if config.attends_fine() { pf } else { 0 };
        // decoder stage inputs: (coarse + attended) -> w2, (+ f_l + attended) -> w1,
        // (+ skip1) -> w0, (+ skip0) -> w0
        let plan = [
            (w[3] + pc, w[2]),
            (w[2] + w[2] + fine_extra, w[1]),
            (w[1] + w[1], w[0]),
            (w[0] + w[0], w[0]),
        ];
        let decoder = plan
            .iter()
            .enumerate()
            .map(|(i, &(ci, co))| conv_norm(store, &mut rng, &format!("dec.{i}"), ci, co))
            .collect();
        let d = config.descriptor_dim;
        let fin = w[0] + 3;
        let out_w = store.add_uniform("dec.out.w", &[d, fin, 3, 3], fin * 9, &mut rng);
        let out_b = store.add_uniform("dec.out.b", &[d], fin * 9, &mut rng);
        let dims = [(d, 1), (1, 1), (1, 1)];
        let distinct = dims
            .iter()
            .enumerate()
            .map(|(i, &(ci, co))| DistinctBlock {
                w: store.add_uniform(format!("distinct.{i}.w"), &[co, ci], ci, &mut rng),
                scale: store.add(format!("distinct.{i}.scale"), Tensor::full(&[co], 1.0)),
                shift: store.add(format!("distinct.{i}.shift"), Tensor::zeros(&[co])),
            })
            .collect();
        Ok(Self {
            config,
            encoder,
            coam_fine,
            coam_coarse,
            decoder,
            out_w,
            out_b,
            distinct,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    /// Parameter ids of the distinctiveness regressor.
    pub fn distinctiveness_params(&self) -> Vec<ParamId> {
        self.distinct.iter().flat_map(|b| [b.w, b.scale, b.shift]).collect()
    }

    fn conv_block(&self, g: &mut Graph, store: &ParamStore, p: &ConvNorm, x: NodeId, stride: usize) -> Result<NodeId> {
        let w = g.param(store, p.w);
        let y = g.conv2d(x, w, None, stride, 1)?;
        let gamma = g.param(store, p.gamma);
        let beta = g.param(store, p.beta);
        let y = g.instance_norm(y, gamma, beta)?;
        Ok(g.relu(y))
    }

    fn mlp(&self, g: &mut Graph, store: &ParamStore, p: &Mlp, x: NodeId) -> Result<NodeId> {
        let (w0, b0) = (g.param(store, p.w0), g.param(store, p.b0));
        let h = g.linear(x, w0, Some(b0))?;
        let h = g.relu(h);
        let (w1, b1) = (g.param(store, p.w1), g.param(store, p.b1));
        g.linear(h, w1, Some(b1))
    }

    fn check_image(&self, shape: &[usize]) -> Result<()> {
        let s = self.config.image_size;
        if shape != [3, s, s] {
            return Err(Error::shape("encode", format!("[3, {s}, {s}]"), format!("{shape:?}")));
        }
        Ok(())
    }

    /// Shared encoder on a `[3, S, S]` image node.
    pub fn encode_nodes(&self, g: &mut Graph, store: &ParamStore, image: NodeId) -> Result<PyramidNodes> {
        self.check_image(g.shape(image))?;
        let mut x = image;
        let mut outs = Vec::with_capacity(NetworkConfig::BLOCKS);
        for p in &self.encoder {
            x = self.conv_block(g, store, p, x, 2)?;
            outs.push(x);
        }
        Ok(PyramidNodes {
            image,
            skips: [outs[0], outs[1]],
            f_l: outs[2],
            f_s: outs[3],
        })
    }

    /// Attends from `own` (`[C, h, w]`) to `other`. Returns the attended
    /// features as `[P, h, w]` and the attention node.
    pub fn coattend_nodes(
        &self,
        g: &mut Graph,
        projection: Projection<'_>,
        own: NodeId,
        other: NodeId,
    ) -> Result<(NodeId, NodeId)> {
        let (os, hs) = (g.shape(own).to_vec(), g.shape(other).to_vec());
        if os.len() != 3 || hs.len() != 3 || os[0] != hs[0] {
            return Err(Error::shape(
                "coattend",
                format!("[C, h, w] pair with C = {}", os[0]),
                format!("{os:?} and {hs:?}"),
            ));
        }
        let own_rows = to_rows(g, own)?;
        let other_rows = to_rows(g, other)?;
        let (gp, hp) = match projection {
            Projection::Identity => (own_rows, other_rows),
            Projection::Learned { store, net, fine } => {
                let p = if fine {
                    net.coam_fine
                        .as_ref()
                        .ok_or_else(|| Error::Config("fine attention disabled".into()))?
                } else {
                    &net.coam_coarse
                };
                (
                    net.mlp(g, store, &p.own, own_rows)?,
                    net.mlp(g, store, &p.other, other_rows)?,
                )
            }
        };
        let (attended, a) = attend(g, gp, hp)?;
        let mut out = from_rows(g, attended, os[1], os[2])?;
        if self.config.ablate_attention {
            let zeros = Tensor::zeros(g.shape(out));
            out = g.constant(zeros);
        }
        Ok((out, a))
    }

    /// UNet decoder. Returns the `[D, S, S]` unnormalized descriptor map.
    pub fn decode_nodes(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        own: &PyramidNodes,
        attended_l: Option<NodeId>,
        attended_s: NodeId,
    ) -> Result<NodeId> {
        let cat = |g: &mut Graph, xs: &[NodeId]| g.concat(xs, 0);
        let up = |g: &mut Graph, x: NodeId| {
            let s = g.shape(x).to_vec();
            g.resize_bilinear(x, s[1] * 2, s[2] * 2)
        };
        for (name, a, f) in [("decode", Some(attended_s), own.f_s), ("decode", attended_l, own.f_l)] {
            if let Some(a) = a {
                if g.shape(a)[1..] != g.shape(f)[1..] {
                    return Err(Error::shape(
                        name,
                        format!("attended at {:?}", &g.shape(f)[1..]),
                        format!("{:?}", g.shape(a)),
                    ));
                }
            }
        }
        if self.config.attends_fine() != attended_l.is_some() {
            return Err(Error::Config(
                "attended larger-scale features do not match attention_scales".into(),
            ));
        }
        let x = cat(g, &[own.f_s, attended_s])?;
        let x = self.conv_block(g, store, &self.decoder[0], x, 1)?;
        let x = up(g, x)?;
        let mut parts = vec![x, own.f_l];
        parts.extend(attended_l);
        let x = cat(g, &parts)?;
        let x = self.conv_block(g, store, &self.decoder[1], x, 1)?;
        let x = up(g, x)?;
        let x = cat(g, &[x, own.skips[1]])?;
        let x = self.conv_block(g, store, &self.decoder[2], x, 1)?;
        let x = up(g, x)?;
        let x = cat(g, &[x, own.skips[0]])?;
        let x = self.conv_block(g, store, &self.decoder[3], x, 1)?;
        let x = up(g, x)?;
        let x = cat(g, &[x, own.image])?;
        let w = g.param(store, self.out_w);
        let b = g.param(store, self.out_b);
        g.conv2d(x, w, Some(b), 1, 1)
    }

    /// Pointwise regressor on `[n, D]` unnormalized descriptors, giving `[n]`.
    pub fn distinctiveness_nodes(&self, g: &mut Graph, store: &ParamStore, rows: NodeId) -> Result<NodeId> {
        let d = self.config.descriptor_dim;
        if g.shape(rows).len() != 2 || g.shape(rows)[1] != d {
            return Err(Error::shape(
                "distinctiveness",
                format!("[n, {d}]"),
                format!("{:?}", g.shape(rows)),
            ));
        }
        let mut x = rows;
        for b in &self.distinct {
            let w = g.param(store, b.w);
            x = g.linear(x, w, None)?;
            let (s, t) = (g.param(store, b.scale), g.param(store, b.shift));
            x = g.channel_affine(x, s, t)?;
        }
        let x = g.sigmoid(x);
        let n = g.shape(x)[0];
        g.reshape(x, &[n])
    }

    fn direction(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        own: &PyramidNodes,
        other: &PyramidNodes,
        detach_distinctiveness: bool,
    ) -> Result<DirectionNodes> {
        let (att_s, a_s) = self.coattend_nodes(
            g,
            Projection::Learned {
                store,
                net: self,
                fine: false,
            },
            own.f_s,
            other.f_s,
        )?;
        let fine = if self.config.attends_fine() {
            Some(self.coattend_nodes(
                g,
                Projection::Learned {
                    store,
                    net: self,
                    fine: true,
                },
                own.f_l,
                other.f_l,
            )?)
        } else {
            None
        };
        let unnormalized = self.decode_nodes(g, store, own, fine.map(|f| f.0), att_s)?;
        let rows = to_rows(g, unnormalized)?;
        let descriptors = g.l2_normalize(rows);
        let r_in = if detach_distinctiveness {
            g.stop_gradient(rows)
        } else {
            rows
        };
        let distinctiveness = self.distinctiveness_nodes(g, store, r_in)?;
        Ok(DirectionNodes {
            unnormalized,
            descriptors,
            distinctiveness,
            attention_fine: fine.map(|f| f.1),
            attention_coarse: a_s,
        })
    }

    /// Both conditioned passes for a pair of `[3, S, S]` image nodes. The
    /// encoder runs once per image and is shared by both directions.
    pub fn forward_pair(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        image1: NodeId,
        image2: NodeId,
        detach_distinctiveness: bool,
    ) -> Result<PairNodes> {
        let p1 = self.encode_nodes(g, store, image1)?;
        let p2 = self.encode_nodes(g, store, image2)?;
        let first = self.direction(g, store, &p1, &p2, detach_distinctiveness)?;
        let second = self.direction(g, store, &p2, &p1, detach_distinctiveness)?;
        Ok(PairNodes { first, second })
    }

    /// Encodes one image into its feature pyramid.
    pub fn encode(&self, store: &ParamStore, image: &Image) -> Result<FeaturePyramid> {
        let mut g = Graph::new();
        let x = g.constant(image.to_tensor());
        let p = self.encode_nodes(&mut g, store, x)?;
        Ok(FeaturePyramid {
            f_l: g.value(p.f_l).clone(),
            f_s: g.value(p.f_s).clone(),
            skips: p.skips.iter().map(|&s| g.value(s).clone()).collect(),
        })
    }

    /// Describes `image1` conditioned on `image2` and vice versa.
    pub fn describe_pair(&self, store: &ParamStore, image1: &Image, image2: &Image) -> Result<PairDescription> {
        let mut g = Graph::new();
        let i1 = g.constant(image1.to_tensor());
        let i2 = g.constant(image2.to_tensor());
        let nodes = self.forward_pair(&mut g, store, i1, i2, true)?;
        let s = self.config.image_size;
        let d = self.config.descriptor_dim;
        let maps = |n: &DirectionNodes| -> Result<(DescriptorMap, DistinctivenessMap)> {
            Ok((
                DescriptorMap::new(s, s, d, g.value(n.descriptors).data().to_vec())?,
                DistinctivenessMap::new(s, s, g.value(n.distinctiveness).data().to_vec())?,
            ))
        };
        let (d1, r1) = maps(&nodes.first)?;
        let (d2, r2) = maps(&nodes.second)?;
        Ok(PairDescription {
            d1,
            r1,
            d2,
            r2,
            attention_fine: nodes
                .first
                .attention_fine
                .map(|a| AttentionMatrix::new(g.value(a).clone()))
                .transpose()?,
            attention_coarse: AttentionMatrix::new(g.value(nodes.first.attention_coarse).clone())?,
        })
    }
}
