use vor_core::egomotion::{eight_point_discrete, Correspondence, EightPointConfig};
use vor_core::geometry::project;
use vor_core::sim::{render_correspondences, NoiseSpec, SimSpec};
use vor_core::{Pose, Vec3};

fn threshold_for(corrs: &[Correspondence]) -> f64 {
    // Bisect the largest degen_ratio that still accepts.
    let (mut lo, mut hi) = (1e-12f64, 1.0f64);
    for _ in 0..60 {
        let mid = (lo.ln() + hi.ln()) / 2.0;
        let mid = mid.exp();
        let cfg = EightPointConfig { degen_ratio: mid, ..EightPointConfig::default() };
        match eight_point_discrete(corrs, &cfg) {
            Ok(_) => lo = mid,
            Err(_) => hi = mid,
        }
    }
    lo
}

#[test]
fn probe_ls_spectrum() {
    let spec = SimSpec::parse("frames = 20").unwrap();
    let preset = spec.build().unwrap();
    for k in 0..19usize {
        let tracks = render_correspondences(
            &preset.scene,
            &preset.trajectory,
            k,
            &preset.intrinsics,
            &NoiseSpec::none(7u64.wrapping_add(k as u64)),
        )
        .unwrap();
        let corrs = tracks.correspondences();
        println!("frame {k:2}: n = {}, max accepting ratio = {:.3e}", corrs.len(), threshold_for(&corrs));
    }

    // Coplanar comparison: 60 points on the road plane only.
    let mut corrs = Vec::new();
    let delta = Pose::new(vor_core::Mat3::identity(), Vec3::new(0.0, 0.0, -1.0)).unwrap();
    let mut id = 0;
    for i in 0..10 {
        for j in 0..6 {
            let x = -4.0 + i as f64 * 0.9;
            let z = 5.0 + j as f64 * 4.0;
            let p = Vec3::new(x, 1.5, z);
            let p2 = delta.transform(&p);
            corrs.push(Correspondence::new(id, project(&p).unwrap(), project(&p2).unwrap()));
            id += 1;
        }
    }
    println!("coplanar: n = {}, max accepting ratio = {:.3e}", corrs.len(), threshold_for(&corrs));
}
