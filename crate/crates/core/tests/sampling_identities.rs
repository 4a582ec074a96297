use amid::imaging::Image;
use amid::sampling::{ddim_step, recover_x0, SamplerConfig};
use amid::schedule::{forward_diffuse, Latent, NoiseSchedule};
use proptest::prelude::*;

fn x0() -> Image {
    Image::from_fn(16, 16, |y, x| (((y * 16 + x) * 7919 % 101) as f32) / 100.0)
}

/// The noise consistent with `x_t` given the true `x₀`.
fn oracle_eps(x: &Latent, x0: &Image, s: &NoiseSchedule) -> Image {
    let (z, c) = (s.zeta(x.t), s.noise_coef(x.t));
    x.image.zip_map(x0, |xt, x0| ((xt as f64 - z * x0 as f64) / c) as f32)
}

#[test]
fn exact_noise_chain_telescopes() {
    let s = NoiseSchedule::default_linear();
    let eps = Image::gaussian(16, 16, &mut amid::rng::stream(1, 0));
    for (t1, n) in [(27, 50), (15, 7), (1, 200)] {
        let cfg = SamplerConfig {
            num_ddim_steps: n,
            ..SamplerConfig::new(t1)
        };
        let mut x = forward_diffuse(&x0(), 1000, &eps, &s).unwrap();
        for t_prev in cfg.substeps(&s).into_iter().skip(1) {
            let e = oracle_eps(&x, &x0(), &s);
            x = ddim_step(&x, t_prev, &e, &s).unwrap();
        }
        assert_eq!(x.t, t1);
        let closed = forward_diffuse(&x0(), t1, &eps, &s).unwrap();
        for (a, b) in x.image.data().iter().zip(closed.image.data()) {
            assert!((a - b).abs() < 1e-4, "t1={t1}: {a} vs {b}");
        }
    }
}

proptest! {
    #[test]
    // large t amplifies f32 rounding by 1/√ᾱ_t; the contract is for the
    // integration range
    fn recovery_inverts_forward_diffusion(t in 1usize..=200, seed in 0u64..1000) {
        let s = NoiseSchedule::default_linear();
        let eps = Image::gaussian(16, 16, &mut amid::rng::stream(seed, 0));
        let lat = forward_diffuse(&x0(), t, &eps, &s).unwrap();
        let r = recover_x0(&lat, &eps, &s).unwrap();
        for (a, b) in r.raw.data().iter().zip(x0().data()) {
            prop_assert!((a - b).abs() < 1e-5);
        }
    }
}
