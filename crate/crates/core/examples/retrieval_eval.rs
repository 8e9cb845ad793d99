//! Builds an index over unit vectors, ranks it for each query and scores mAP and UKB.

use ddr_vlad::evaluation::{mean_ap, ukb_score, GroundTruth, Protocol};
use ddr_vlad::retrieval::{index_build, search, RankedList};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn main() -> anyhow::Result<()> {
    let (groups, per_group, dim) = (10, 4, 16);
    let noise = Normal::new(0.0, 0.3)?;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut ids = Vec::new();
    let mut values = Vec::new();
    let mut gt_ex = GroundTruth::new(Protocol::ExcludeQuery);
    let mut gt_in = GroundTruth::new(Protocol::IncludeQuery);
    for g in 0..groups {
        let center: Vec<f64> = (0..dim).map(|_| noise.sample(&mut rng) / 0.3).collect();
        let members: Vec<String> = (0..per_group).map(|j| format!("g{g}_{j}")).collect();
        for id in &members {
            let v = unit(center.iter().map(|c| c + noise.sample(&mut rng)).collect());
            values.extend(v);
            ids.push(id.clone());
        }
        let query = members[0].clone();
        gt_ex.insert(&query, members[1..].iter().cloned());
        gt_in.insert(&query, members.iter().cloned());
    }
    let index = index_build(&values, dim, ids.clone())?;

    let mut excl = Vec::new();
    let mut incl = Vec::new();
    for (i, id) in ids.iter().enumerate().step_by(per_group) {
        let q = &values[i * dim..(i + 1) * dim];
        excl.push(RankedList {
            query_id: id.clone(),
            hits: search(&index, q, None, Some(id))?,
        });
        incl.push(RankedList {
            query_id: id.clone(),
            hits: search(&index, q, Some(4), None)?,
        });
    }
    println!(
        "mAP (query excluded) = {:.4}",
        mean_ap(&excl, &gt_ex)?.value
    );
    println!(
        "UKB score (query included) = {:.3}",
        ukb_score(&incl, &gt_in)?.value
    );
    Ok(())
}
