//! Scratch benchmark: cost of one optimization iteration at full scale.
//! Run: cargo run -p silbox-core --example iter_bench --release

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use silbox_core::diffmath::{Real, Tape};
use silbox_core::fields::{BoundBox, BoundInstance, BoundScene};
use silbox_core::rendering::{hierarchical_sample, render_silhouette, tighten_ray_bounds, Ray};
use silbox_core::scene_io::{generate_synthetic, SyntheticSpec};

fn main() {
    let spec = SyntheticSpec {
        n_boxes: 4,
        seed: 7,
        loc_min: [-4.5, -0.3, -3.5],
        loc_max: [4.5, 0.3, 3.5],
        ..SyntheticSpec::default()
    };
    let scene = generate_synthetic(&spec).expect("synthetic scene");
    let gt: Vec<_> = scene.gt_boxes().unwrap().iter().map(|(_, b)| *b).collect();
    let n_inst = gt.len();

    // Rays: uniform over lit mask pixels across all frames (a stand-in for
    // the soft-mask multinomial; same concentration on objects).
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut lit: Vec<(usize, u32, u32, u16)> = Vec::new();
    for (fi, mask) in scene.masks().iter().enumerate() {
        for r in 0..mask.height() {
            for c in 0..mask.width() {
                let id = mask.get(r, c);
                if id != 0 {
                    lit.push((fi, r, c, id));
                }
            }
        }
    }
    println!("lit pixels: {}", lit.len());

    let n_rays = 1000usize;
    let sharpness = 50.0;
    let tau = 0.1;
    let chunk = 64usize;

    for round in 0..3 {
        let t0 = Instant::now();
        let mut rays: Vec<Ray> = Vec::with_capacity(n_rays);
        for _ in 0..n_rays {
            let (fi, r, c, id) = lit[rng.gen_range(0..lit.len())];
            let frame = &scene.frames()[fi];
            let (o, d) = frame.pixel_ray(c as f64 + 0.5, r as f64 + 0.5);
            let mut label = vec![0.0; n_inst + 1];
            label[(id - 1) as usize] = 1.0;
            let ray = Ray::new(o, d, 0.01, 100.0, label);
            if let Some((lo, hi)) = tighten_ray_bounds(&ray, &gt, 0.35) {
                rays.push(Ray::new(o, d, lo, hi, ray.gt_label.clone()));
            }
        }
        let t_rays = t0.elapsed();

        // f64 sampling pass.
        let t1 = Instant::now();
        let scene_f: BoundScene<f64> = BoundScene::new(
            gt.iter()
                .map(|b| BoundInstance {
                    geom: BoundBox::from_params(b),
                    phi: None,
                })
                .collect(),
            None,
        )
        .unwrap();
        let samples: Vec<Vec<f64>> = rays
            .iter()
            .map(|ray| {
                hierarchical_sample(ray, &scene_f, sharpness, 100, 100, &mut rng)
                    .unwrap()
                    .t()
                    .to_vec()
            })
            .collect();
        let t_sample = t1.elapsed();

        // Tape pass: chunked render + CE + backward.
        let t2 = Instant::now();
        let mut grads = vec![0.0; n_inst * 7];
        let mut total_nodes = 0usize;
        let tape = Tape::new();
        let mut loss_val = 0.0;
        let mut t_fwd = std::time::Duration::ZERO;
        let mut t_bwd = std::time::Duration::ZERO;
        for ch in rays.chunks(chunk) {
            let t_f = Instant::now();
            tape.reset();
            let boxes_v: Vec<BoundInstance<_>> = gt
                .iter()
                .map(|b| {
                    let dim = b.dim.map(|v| tape.leaf(v));
                    let loc = b.loc.map(|v| tape.leaf(v));
                    let yaw = tape.leaf(b.yaw);
                    BoundInstance {
                        geom: BoundBox::new(dim, loc, yaw),
                        phi: None,
                    }
                })
                .collect();
            let scene_v = BoundScene::new(boxes_v, None).unwrap();
            let mut loss = None;
            for (ray, t) in ch.iter().zip(samples[..1].iter().cycle()) {
                // reuse sample layout shape; per-ray t vectors
                let _ = t;
            }
            for (k, ray) in ch.iter().enumerate() {
                let idx = (ch.as_ptr() as usize - rays.as_ptr() as usize)
                    / std::mem::size_of::<Ray>()
                    + k;
                let t = &samples[idx];
                let out = render_silhouette(ray, &scene_v, t, sharpness, tau).unwrap();
                // cross entropy against the one-hot label
                let mut ce = None;
                for (o, &g) in out.iter().zip(&ray.gt_label) {
                    if g > 0.0 {
                        let term = o.add_c(1e-7).ln().mul_c(-g);
                        ce = Some(match ce {
                            None => term,
                            Some(acc) => acc + term,
                        });
                    }
                }
                loss = Some(match (loss, ce) {
                    (None, Some(c)) => c,
                    (Some(acc), Some(c)) => acc + c,
                    (l, None) => l.unwrap(),
                });
            }
            let loss = loss.unwrap().mul_c(1.0 / rays.len() as f64);
            loss_val += loss.val();
            total_nodes += tape.len();
            t_fwd += t_f.elapsed();
            let t_b = Instant::now();
            let g = tape.backward(loss).unwrap();
            t_bwd += t_b.elapsed();
            for (acc, gi) in grads.iter_mut().zip(&g) {
                *acc += gi;
            }
        }
        let t_tape = t2.elapsed();
        println!(
            "round {round}: rays {:?}  sampling {:?}  tape {:?} (fwd {:?} bwd {:?})  (nodes {}, loss {:.4}, g0 {:+.3e})  TOTAL {:?}",
            t_rays,
            t_sample,
            t_tape,
            t_fwd,
            t_bwd,
            total_nodes,
            loss_val,
            grads[0],
            t0.elapsed()
        );
    }
}
