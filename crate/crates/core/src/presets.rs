//! Ready-made instances used by the experiments.

use crate::model::{EnvFactors, MdpModel, TrafficModel};
use crate::mos::{benefit_from_mos, LinkQuality, LogBase, MosParams, MosTrafficKind};

/// Token cap used by [`realistic`]; the two-type scenario does not fix one.
pub const REALISTIC_TOKEN_CAP: usize = 20;

/// Four traffic types with benefits 3, 4, 5, 6, uniform probabilities 0.2,
/// `c = 1`, `K = 20`, `beta = 0.99`, `p = q = 0.5`.
pub fn illustrative() -> MdpModel {
    MdpModel::new(
        TrafficModel::new(vec![0.2; 5], vec![3.0, 4.0, 5.0, 6.0]),
        EnvFactors::new(0.5, 0.5),
        1.0,
        0.99,
        20,
    )
}

/// D2D and cellular link qualities of the two-type scenario.
pub fn realistic_links() -> (LinkQuality, LinkQuality) {
    (
        LinkQuality {
            psnr: 10.0,
            throughput: 1500.0,
        },
        LinkQuality {
            psnr: 5.0,
            throughput: 1000.0,
        },
    )
}

/// Idle, elastic and video traffic with MOS-derived benefits.
///
/// Elastic has the smaller benefit, so it is type 1 and video is type 2.
/// Probabilities: idle 0.3, elastic 0.5, video 0.2; `p = q = 0.8`,
/// `c = 0.4`, `beta = 0.99`.
pub fn realistic(log_base: LogBase) -> MdpModel {
    let params = MosParams {
        log_base,
        ..MosParams::default()
    };
    let (d2d, cell) = realistic_links();
    let elastic = benefit_from_mos(&params, &d2d, &cell, MosTrafficKind::Elastic).expect("default MOS parameters");
    let video = benefit_from_mos(&params, &d2d, &cell, MosTrafficKind::Video).expect("default MOS parameters");
    MdpModel::new(
        TrafficModel::new(vec![0.3, 0.5, 0.2], vec![elastic, video]).with_labels(&["idle", "elastic", "video"]),
        EnvFactors::new(0.8, 0.8),
        0.4,
        0.99,
        REALISTIC_TOKEN_CAP,
    )
}
