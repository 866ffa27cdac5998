//! Event-to-primitive association from tracker poses.
//!
//! An event is linked to a primitive when the primitive's projection at the
//! event time, under the tracker trajectory, lands in the event's pixel.

use super::Association;
use crate::sensors::{
    corrected_projection, segment_distance, CameraIntrinsics, Event, ModelParams, PrimitiveKind,
    SceneMap,
};
use crate::trajectory::SplineTrajectory;

#[derive(Debug, Clone, PartialEq)]
pub struct AssociationOutcome {
    pub associations: Vec<Association>,
    /// Events with no primitive within the radius; treated as noise.
    pub unassociated: usize,
    /// Events outside the trajectory domain.
    pub out_of_domain: usize,
}

/// Associates each event with the nearest primitive whose projection lies
/// within `radius` pixels (Chebyshev distance for points, Euclidean distance
/// to the segment for lines). `radius = 0.5` is the same-pixel rule.
pub fn derive_associations(
    events: &[Event],
    map: &SceneMap,
    intrinsics: &CameraIntrinsics,
    trajectory: &SplineTrajectory,
    params: &ModelParams,
    radius: f64,
) -> AssociationOutcome {
    let mut out = AssociationOutcome {
        associations: Vec::new(),
        unassociated: 0,
        out_of_domain: 0,
    };
    let kind = map.kind();
    let mut projected = Vec::new();
    for (index, ev) in events.iter().enumerate() {
        let Ok(pose) = trajectory.pose_at(ev.t) else {
            out.out_of_domain += 1;
            continue;
        };
        let proj = corrected_projection(&pose, intrinsics, params);
        let e = ev.pixel();
        let mut best: Option<(f64, u64)> = None;
        let mut consider = |d: f64, id: u64| {
            if d <= radius && best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, id));
            }
        };
        match kind {
            Some(PrimitiveKind::Point) => {
                for p in &map.points {
                    if let Ok(px) = proj.project(&p.position) {
                        consider((px - e).amax(), p.id);
                    }
                }
            }
            Some(PrimitiveKind::Line) => {
                projected.clear();
                for s in &map.segments {
                    if let (Ok(a), Ok(b)) = (proj.project(&s.start), proj.project(&s.end)) {
                        projected.push((segment_distance(&e, &a, &b), s.id));
                    }
                }
                for (d, id) in &projected {
                    consider(*d, *id);
                }
            }
            None => {}
        }
        match (best, kind) {
            (Some((_, id)), Some(kind)) => out.associations.push(Association {
                event_index: index,
                primitive_id: id,
                kind,
            }),
            _ => out.unassociated += 1,
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::super::test_support::*;
    use super::*;

    #[test]
    fn recovers_exact_associations() {
        for lines in [false, true] {
            let s = synthetic(8, 400, 0, lines, ModelParams::default(), 41);
            let out = derive_associations(
                &s.events,
                &s.map,
                &CameraIntrinsics::default(),
                &s.trajectory,
                &s.params,
                0.5,
            );
            assert_eq!(out.out_of_domain, 0);
            // lines may cross in the image, so a few events are ambiguous
            let agree = out
                .associations
                .iter()
                .filter(|a| s.associations[a.event_index] == **a)
                .count();
            assert!(agree as f64 >= 0.95 * s.events.len() as f64, "{lines}: {agree}");
        }
    }
}
