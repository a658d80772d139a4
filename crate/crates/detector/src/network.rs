//! Batched forward and backward passes over a flat parameter vector.

use crate::arch::{Architecture, BnLayout, Layout};
use crate::ops::{self, BnCache, Conv, Scalar, BN_MOMENTUM};

/// Borrowed view of one network's parameters.
pub struct Net<'a, T> {
    pub arch: &'a Architecture,
    pub layout: &'a Layout,
    pub params: &'a [T],
}

struct BlockCache<T> {
    input: Vec<T>,
    bn1: BnCache<T>,
    a1: Vec<T>,
    bn2: BnCache<T>,
    out: Vec<T>,
}

/// Activations kept by a training-mode forward pass for backprop.
pub struct ForwardCache<T> {
    n: usize,
    input: Vec<T>,
    bn_in: BnCache<T>,
    blocks: Vec<BlockCache<T>>,
    bn_head: BnCache<T>,
    features: Vec<T>,
}

impl<T: Scalar> ForwardCache<T> {
    /// Which rectifier outputs are active, in a fixed order. Two passes with
    /// equal patterns lie on the same smooth piece of the loss.
    pub fn relu_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for b in &self.blocks {
            out.extend(b.input.iter().chain(&b.a1).map(|&v| v > T::zero()));
        }
        if let Some(b) = self.blocks.last() {
            out.extend(b.out.iter().map(|&v| v > T::zero()));
        }
        out.extend(self.features.iter().map(|&v| v > T::zero()));
        out
    }
}

#[derive(Clone, Copy)]
enum BnMode<'r, T> {
    Train,
    Infer(&'r [T]),
}

impl<'a, T: Scalar> Net<'a, T> {
    fn slice(&self, at: usize, len: usize) -> &'a [T] {
        &self.params[at..at + len]
    }

    fn conv(&self, cin: usize, k: usize, stride: usize, lin: usize) -> Conv {
        Conv {
            cin,
            cout: self.arch.channels,
            k,
            stride,
            lin,
        }
    }

    fn conv_batch(&self, cv: &Conv, w: &[T], bias: Option<&[T]>, x: &[T], n: usize) -> Vec<T> {
        let (isz, osz) = (cv.cin * cv.lin, cv.cout * cv.lout());
        let mut y = vec![T::zero(); n * osz];
        for i in 0..n {
            cv.forward(w, bias, &x[i * isz..(i + 1) * isz], &mut y[i * osz..(i + 1) * osz]);
        }
        y
    }

    fn batch_norm(
        &self,
        bn: &BnLayout,
        x: &[T],
        dims: (usize, usize, usize),
        mode: BnMode<T>,
        updates: &mut Vec<(usize, Vec<f64>, Vec<f64>)>,
    ) -> (Vec<T>, BnCache<T>) {
        let c = dims.1;
        let (g, b) = (self.slice(bn.gamma, c), self.slice(bn.beta, c));
        let mut y = vec![T::zero(); x.len()];
        match mode {
            BnMode::Train => {
                let (cache, mean, var) = ops::bn_train(x, dims, g, b, &mut y);
                updates.push((bn.running, mean, var));
                (y, cache)
            }
            BnMode::Infer(running) => {
                let mean = &running[bn.running..bn.running + c];
                let var = &running[bn.running + c..bn.running + 2 * c];
                ops::bn_infer(x, dims, g, b, mean, var, &mut y);
                (y, BnCache::default())
            }
        }
    }

    /// Shared forward pass. Returns logits, the cache, running-stat updates
    /// and the `(channels, length)` of each stage.
    #[allow(clippy::type_complexity)]
    fn run(
        &self,
        x: &[T],
        n: usize,
        mode: BnMode<T>,
    ) -> (Vec<T>, ForwardCache<T>, Vec<(usize, Vec<f64>, Vec<f64>)>, Vec<(usize, usize)>) {
        let (c, k) = (self.arch.channels, self.arch.kernel);
        let lay = self.layout;
        let keep = matches!(mode, BnMode::Train);
        let mut updates = Vec::new();
        let mut l = self.arch.input_len;
        let mut shapes = Vec::new();

        let cv = self.conv(1, k, 1, l);
        let h = self.conv_batch(&cv, self.slice(lay.input_conv, c * k), None, x, n);
        let (mut a, bn_in) = self.batch_norm(&lay.input_bn, &h, (n, c, l), mode, &mut updates);
        ops::relu_in_place(&mut a);
        shapes.push((c, l));

        let mut blocks = Vec::new();
        for bl in &lay.blocks {
            let s = bl.stride;
            let lo = l / s;
            let cv1 = self.conv(c, k, s, l);
            let h1 = self.conv_batch(&cv1, self.slice(bl.conv1, c * c * k), None, &a, n);
            let (mut a1, bn1) = self.batch_norm(&bl.bn1, &h1, (n, c, lo), mode, &mut updates);
            ops::relu_in_place(&mut a1);
            let cv2 = self.conv(c, k, 1, lo);
            let h2 = self.conv_batch(&cv2, self.slice(bl.conv2, c * c * k), None, &a1, n);
            let (mut out, bn2) = self.batch_norm(&bl.bn2, &h2, (n, c, lo), mode, &mut updates);
            match bl.shortcut {
                None => ops::axpy(&mut out, T::one(), &a),
                Some((w, b)) => {
                    let cvs = self.conv(c, 1, s, l);
                    let sc = self.conv_batch(&cvs, self.slice(w, c * c), Some(self.slice(b, c)), &a, n);
                    ops::axpy(&mut out, T::one(), &sc);
                }
            }
            ops::relu_in_place(&mut out);
            let input = std::mem::replace(&mut a, out.clone());
            if keep {
                blocks.push(BlockCache {
                    input,
                    bn1,
                    a1,
                    bn2,
                    out,
                });
            }
            l = lo;
            shapes.push((c, l));
        }

        let (mut f, bn_head) = self.batch_norm(&lay.head_bn, &a, (n, c, l), mode, &mut updates);
        ops::relu_in_place(&mut f);
        let fl = c * l;
        let classes = self.arch.classes;
        let w = self.slice(lay.dense_w, classes * fl);
        let bias = self.slice(lay.dense_b, classes);
        let mut logits = vec![T::zero(); n * classes];
        for i in 0..n {
            for j in 0..classes {
                logits[i * classes + j] = bias[j] + ops::dot(&w[j * fl..(j + 1) * fl], &f[i * fl..(i + 1) * fl]);
            }
        }
        let cache = ForwardCache {
            n,
            input: if keep { x.to_vec() } else { Vec::new() },
            bn_in,
            blocks,
            bn_head,
            features: if keep { f } else { Vec::new() },
        };
        (logits, cache, updates, shapes)
    }

    /// Inference with running statistics. Returns logits (`n * classes`)
    /// and the `(channels, length)` after the input stage and each block.
    pub fn forward_infer(&self, running: &[T], x: &[T], n: usize) -> (Vec<T>, Vec<(usize, usize)>) {
        let (logits, _, _, shapes) = self.run(x, n, BnMode::Infer(running));
        (logits, shapes)
    }

    /// Training-mode pass using batch statistics. Running statistics are
    /// blended into `running` when given.
    pub fn forward_train(&self, running: Option<&mut [T]>, x: &[T], n: usize) -> (Vec<T>, ForwardCache<T>) {
        let (logits, cache, updates, _) = self.run(x, n, BnMode::Train);
        if let Some(running) = running {
            let c = self.arch.channels;
            let keep = BN_MOMENTUM;
            for (at, mean, var) in updates {
                for ch in 0..c {
                    let m = &mut running[at + ch];
                    *m = T::c(keep * m.f64() + (1.0 - keep) * mean[ch]);
                    let v = &mut running[at + c + ch];
                    *v = T::c(keep * v.f64() + (1.0 - keep) * var[ch]);
                }
            }
        }
        (logits, cache)
    }

    /// Parameter gradients given `dlogits` (`n * classes`).
    pub fn backward(&self, cache: &ForwardCache<T>, dlogits: &[T]) -> Vec<T> {
        let (c, k) = (self.arch.channels, self.arch.kernel);
        let lay = self.layout;
        let n = cache.n;
        let classes = self.arch.classes;
        let lens = self.arch.temporal_lengths();
        let mut l = *lens.last().expect("at least the input length");
        let fl = c * l;
        let mut grad = vec![T::zero(); self.params.len()];

        // Dense head.
        let w = self.slice(lay.dense_w, classes * fl);
        let mut df = vec![T::zero(); n * fl];
        for i in 0..n {
            let fi = &cache.features[i * fl..(i + 1) * fl];
            for j in 0..classes {
                let d = dlogits[i * classes + j];
                let at = lay.dense_w + j * fl;
                ops::axpy(&mut grad[at..at + fl], d, fi);
                grad[lay.dense_b + j] = grad[lay.dense_b + j] + d;
                ops::axpy(&mut df[i * fl..(i + 1) * fl], d, &w[j * fl..(j + 1) * fl]);
            }
        }
        ops::relu_mask(&mut df, &cache.features);
        let mut da = self.bn_grad(&lay.head_bn, &df, &cache.bn_head, (n, c, l), &mut grad);

        for (bl, bc) in lay.blocks.iter().zip(&cache.blocks).rev() {
            let s = bl.stride;
            let lin = l * s;
            let mut dsum = da;
            ops::relu_mask(&mut dsum, &bc.out);
            // Main path: bn2 <- conv2 <- relu <- bn1 <- conv1.
            let dh2 = self.bn_grad(&bl.bn2, &dsum, &bc.bn2, (n, c, l), &mut grad);
            let cv2 = self.conv(c, k, 1, l);
            let mut da1 = self.conv_grad(&cv2, bl.conv2, &bc.a1, &dh2, None, n, &mut grad);
            ops::relu_mask(&mut da1, &bc.a1);
            let dh1 = self.bn_grad(&bl.bn1, &da1, &bc.bn1, (n, c, l), &mut grad);
            let cv1 = self.conv(c, k, s, lin);
            let mut dx = self.conv_grad(&cv1, bl.conv1, &bc.input, &dh1, None, n, &mut grad);
            match bl.shortcut {
                None => ops::axpy(&mut dx, T::one(), &dsum),
                Some((w, b)) => {
                    let cvs = self.conv(c, 1, s, lin);
                    let dsc = self.conv_grad(&cvs, w, &bc.input, &dsum, Some(b), n, &mut grad);
                    ops::axpy(&mut dx, T::one(), &dsc);
                }
            }
            da = dx;
            l = lin;
        }

        // Input stage: relu <- bn <- conv.
        let a0 = match cache.blocks.first() {
            Some(b) => &b.input,
            None => &cache.features,
        };
        ops::relu_mask(&mut da, a0);
        let dh = self.bn_grad(&lay.input_bn, &da, &cache.bn_in, (n, c, l), &mut grad);
        let cv = self.conv(1, k, 1, l);
        let w = self.slice(lay.input_conv, c * k);
        let (isz, osz) = (l, c * l);
        for i in 0..n {
            cv.backward(
                w,
                &cache.input[i * isz..(i + 1) * isz],
                &dh[i * osz..(i + 1) * osz],
                &mut grad[lay.input_conv..lay.input_conv + c * k],
                None,
                None,
            );
        }
        grad
    }

    fn bn_grad(&self, bn: &BnLayout, dy: &[T], cache: &BnCache<T>, dims: (usize, usize, usize), grad: &mut [T]) -> Vec<T> {
        let c = dims.1;
        let gamma = self.slice(bn.gamma, c);
        let mut dg = vec![T::zero(); c];
        let mut db = vec![T::zero(); c];
        let mut dx = vec![T::zero(); dy.len()];
        ops::bn_backward(dy, cache, dims, gamma, &mut dg, &mut db, &mut dx);
        for ch in 0..c {
            grad[bn.gamma + ch] = grad[bn.gamma + ch] + dg[ch];
            grad[bn.beta + ch] = grad[bn.beta + ch] + db[ch];
        }
        dx
    }

    #[allow(clippy::too_many_arguments)]
    fn conv_grad(
        &self,
        cv: &Conv,
        w_at: usize,
        x: &[T],
        dy: &[T],
        bias_at: Option<usize>,
        n: usize,
        grad: &mut [T],
    ) -> Vec<T> {
        let wlen = cv.cout * cv.cin * cv.k;
        let w = self.slice(w_at, wlen);
        let (isz, osz) = (cv.cin * cv.lin, cv.cout * cv.lout());
        let mut dw = vec![T::zero(); wlen];
        let mut db = vec![T::zero(); cv.cout];
        let mut dx = vec![T::zero(); n * isz];
        for i in 0..n {
            cv.backward(
                w,
                &x[i * isz..(i + 1) * isz],
                &dy[i * osz..(i + 1) * osz],
                &mut dw,
                bias_at.is_some().then_some(&mut db[..]),
                Some(&mut dx[i * isz..(i + 1) * isz]),
            );
        }
        for (g, d) in grad[w_at..w_at + wlen].iter_mut().zip(&dw) {
            *g = *g + *d;
        }
        if let Some(b) = bias_at {
            for (g, d) in grad[b..b + cv.cout].iter_mut().zip(&db) {
                *g = *g + *d;
            }
        }
        dx
    }
}
