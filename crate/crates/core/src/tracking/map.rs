use std::collections::BTreeMap;

use nalgebra::{DMatrix, Vector2, Vector3};

use super::{FrameState, TrackingError};
use crate::geometry::{backproject, project, CameraIntrinsics, PoseSE3};
use crate::matcher::{assign_states, extract_matches, MatcherWeights};

#[derive(Debug, Clone, PartialEq)]
pub struct Landmark {
    pub position: Vector3<f64>,
    pub descriptor: Vec<f32>,
    pub first_frame: usize,
    pub last_seen: usize,
}

/// Landmarks keyed by a never-reused id, plus the keyframe history.
#[derive(Debug, Clone, Default)]
pub struct LocalMap {
    landmarks: BTreeMap<usize, Landmark>,
    keyframes: Vec<(usize, PoseSE3)>,
    next_id: usize,
}

impl LocalMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn landmarks(&self) -> &BTreeMap<usize, Landmark> {
        &self.landmarks
    }

    pub fn keyframes(&self) -> &[(usize, PoseSE3)] {
        &self.keyframes
    }

    pub fn len(&self) -> usize {
        self.landmarks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.landmarks.is_empty()
    }

    pub fn insert(&mut self, landmark: Landmark) -> usize {
        let id = self.next_id;
        self.next_id += 1;
        self.landmarks.insert(id, landmark);
        id
    }

    /// Keyframe indices must strictly increase.
    pub fn add_keyframe(&mut self, frame_index: usize, pose: PoseSE3) {
        if let Some((last, _)) = self.keyframes.last() {
            assert!(frame_index > *last, "keyframe {frame_index} does not follow {last}");
        }
        self.keyframes.push((frame_index, pose));
    }

    pub fn mark_seen(&mut self, id: usize, frame_index: usize) {
        if let Some(l) = self.landmarks.get_mut(&id) {
            l.last_seen = l.last_seen.max(frame_index);
        }
    }

    /// Drops landmarks not observed within the last `window` frames.
    pub fn prune(&mut self, current_frame: usize, window: usize) {
        self.landmarks.retain(|_, l| l.last_seen + window >= current_frame);
    }
}

/// Associates map landmarks with frame keypoints. Landmarks are projected
/// through `predicted` (world-from-camera); only landmarks and keypoints
/// that have a partner within `search_radius` pixels take part. The
/// assignment matrix is computed over those candidates, pairs further than
/// the radius are then zeroed, and mutual-best pairs scoring at least
/// `threshold` are returned as `(landmark id, keypoint index)`.
pub fn associate(
    frame: &FrameState,
    map: &LocalMap,
    predicted: &PoseSE3,
    weights: &MatcherWeights,
    search_radius: f64,
    threshold: f64,
    k: &CameraIntrinsics,
) -> Result<Vec<(usize, usize)>, TrackingError> {
    let kps = frame.features.keypoints();
    if map.is_empty() || kps.is_empty() {
        return Ok(Vec::new());
    }
    let dim = frame.features.descriptor_dim();
    if weights.dim() != dim {
        return Err(TrackingError::Matcher(format!("weights expect dim {}, frame has {dim}", weights.dim())));
    }
    let t_cw = predicted.inverse();
    let projected: Vec<(usize, &Landmark, Vector2<f64>)> = map
        .landmarks
        .iter()
        .filter(|(_, l)| l.descriptor.len() == dim)
        .filter_map(|(&id, l)| project(&t_cw.transform_point(&l.position), k).ok().map(|uv| (id, l, uv)))
        .collect();
    let r2 = search_radius * search_radius;
    let mut near = vec![Vec::new(); projected.len()];
    let mut kp_used = vec![false; kps.len()];
    for (li, (_, _, uv)) in projected.iter().enumerate() {
        for (ki, kp) in kps.iter().enumerate() {
            let d2 = (kp.x as f64 - uv.x).powi(2) + (kp.y as f64 - uv.y).powi(2);
            if d2 <= r2 {
                near[li].push(ki);
                kp_used[ki] = true;
            }
        }
    }
    let lm_rows: Vec<usize> = (0..projected.len()).filter(|&li| !near[li].is_empty()).collect();
    let kp_cols: Vec<usize> = (0..kps.len()).filter(|&ki| kp_used[ki]).collect();
    if lm_rows.is_empty() {
        return Ok(Vec::new());
    }
    let xa = DMatrix::from_fn(lm_rows.len(), dim, |r, c| projected[lm_rows[r]].1.descriptor[c] as f64);
    let xb = DMatrix::from_fn(kp_cols.len(), dim, |r, c| frame.features.descriptor(kp_cols[r])[c] as f64);
    let (mut p, _, _) = assign_states(xa, xb, weights).map_err(|e| TrackingError::Matcher(e.to_string()))?;
    let mut col_of = vec![usize::MAX; kps.len()];
    for (c, &ki) in kp_cols.iter().enumerate() {
        col_of[ki] = c;
    }
    let mut inside = DMatrix::from_element(lm_rows.len(), kp_cols.len(), false);
    for (r, &li) in lm_rows.iter().enumerate() {
        for &ki in &near[li] {
            inside[(r, col_of[ki])] = true;
        }
    }
    p.zip_apply(&inside, |v, ok| {
        if !ok {
            *v = 0.0;
        }
    });
    Ok(extract_matches(&p, threshold)
        .into_iter()
        .map(|m| (projected[lm_rows[m.i]].0, kp_cols[m.j]))
        .collect())
}

/// Landmarks in front of the camera whose projection falls inside a
/// `width × height` image.
pub fn count_visible(map: &LocalMap, pose: &PoseSE3, k: &CameraIntrinsics, width: usize, height: usize) -> usize {
    let t_cw = pose.inverse();
    let (w, h) = (width as f64 - 0.5, height as f64 - 0.5);
    map.landmarks
        .values()
        .filter_map(|l| project(&t_cw.transform_point(&l.position), k).ok())
        .filter(|uv| uv.x >= -0.5 && uv.y >= -0.5 && uv.x < w && uv.y < h)
        .count()
}

/// Backprojects every keypoint that has a valid depth and no associated
/// landmark into a new landmark carrying its descriptor.
pub fn spawn_landmarks(frame: &FrameState, map: &mut LocalMap, k: &CameraIntrinsics) -> usize {
    let mut added = 0;
    for (i, kp) in frame.features.keypoints().iter().enumerate() {
        if frame.landmark_ids.get(i).copied().flatten().is_some() {
            continue;
        }
        let Some(z) = frame.keypoint_depths.get(i).copied().flatten() else { continue };
        let Ok(pc) = backproject(kp.x as f64, kp.y as f64, z, k) else { continue };
        map.insert(Landmark {
            position: frame.pose.transform_point(&pc),
            descriptor: frame.features.descriptor(i).to_vec(),
            first_frame: frame.frame_index,
            last_seen: frame.frame_index,
        });
        added += 1;
    }
    added
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{FeatureSet, Keypoint};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::new(400.0, 400.0, 160.0, 120.0).unwrap()
    }

    fn unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f32> {
        let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter().map(|x| (x / n) as f32).collect()
    }

    struct Scene {
        points: Vec<Vector3<f64>>,
        descriptors: Vec<Vec<f32>>,
    }

    fn scene(rng: &mut ChaCha8Rng, n: usize) -> Scene {
        let points = (0..n)
            .map(|_| Vector3::new(rng.random_range(-1.5..1.5), rng.random_range(-1.0..1.0), rng.random_range(3.0..6.0)))
            .collect();
        let descriptors = (0..n).map(|_| unit(rng, 64)).collect();
        Scene { points, descriptors }
    }

    fn observe(s: &Scene, pose: &PoseSE3, order: &[usize], frame_index: usize) -> (FrameState, Vec<usize>) {
        let t_cw = pose.inverse();
        let mut kps = Vec::new();
        let mut desc = Vec::new();
        let mut depths = Vec::new();
        let mut truth = Vec::new();
        for &i in order {
            let pc = t_cw.transform_point(&s.points[i]);
            let uv = project(&pc, &k()).unwrap();
            kps.push(Keypoint { x: uv.x as f32, y: uv.y as f32, level: 0, response: 1.0 });
            desc.extend_from_slice(&s.descriptors[i]);
            depths.push(Some(pc.z));
            truth.push(i);
        }
        let n = kps.len();
        let frame = FrameState {
            frame_index,
            timestamp: frame_index as f64,
            pose: pose.clone(),
            features: FeatureSet::new(kps, desc, 64).unwrap(),
            keypoint_depths: depths,
            landmark_ids: vec![None; n],
        };
        (frame, truth)
    }

    fn weights() -> MatcherWeights {
        MatcherWeights::scaled_identity(64, 20.0, 3.0)
    }

    #[test]
    fn empty_map_gives_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = scene(&mut rng, 10);
        let (frame, _) = observe(&s, &PoseSE3::identity(), &(0..10).collect::<Vec<_>>(), 0);
        let got = associate(&frame, &LocalMap::new(), &PoseSE3::identity(), &weights(), 10.0, 0.2, &k()).unwrap();
        assert!(got.is_empty());
    }

    #[test]
    fn spawned_landmarks_match_ground_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = scene(&mut rng, 40);
        let pose = PoseSE3::from_axis_angle(Vector3::new(0.05, -0.1, 0.02), Vector3::new(0.3, -0.1, 0.2));
        let order: Vec<usize> = (0..40).collect();
        let (frame, truth) = observe(&s, &pose, &order, 0);
        let mut map = LocalMap::new();
        assert_eq!(spawn_landmarks(&frame, &mut map, &k()), 40);
        // Ground truth from the stored (f32) pixel and the exact depth.
        for (id, l) in map.landmarks() {
            let kp = frame.features.keypoints()[*id];
            let z = pose.inverse().transform_point(&s.points[truth[*id]]).z;
            let want = pose.transform_point(&Vector3::new((kp.x as f64 - 160.0) * z / 400.0, (kp.y as f64 - 120.0) * z / 400.0, z));
            assert!((l.position - want).norm() < 1e-9);
            assert!((l.position - s.points[truth[*id]]).norm() < 1e-5);
        }
    }

    #[test]
    fn spawn_skips_associated_and_invalid() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = scene(&mut rng, 6);
        let (mut frame, _) = observe(&s, &PoseSE3::identity(), &(0..6).collect::<Vec<_>>(), 0);
        frame.keypoint_depths[1] = None;
        frame.landmark_ids[2] = Some(99);
        let mut map = LocalMap::new();
        assert_eq!(spawn_landmarks(&frame, &mut map, &k()), 4);
        frame.landmark_ids = vec![Some(0); 6];
        assert_eq!(spawn_landmarks(&frame, &mut map, &k()), 0);
    }

    #[test]
    fn association_recovers_ground_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = scene(&mut rng, 120);
        let (first, truth0) = observe(&s, &PoseSE3::identity(), &(0..120).collect::<Vec<_>>(), 0);
        let mut map = LocalMap::new();
        spawn_landmarks(&first, &mut map, &k());
        let pose = PoseSE3::from_axis_angle(Vector3::new(0.0, 0.05, 0.0), Vector3::new(0.1, 0.0, 0.05));
        let mut order: Vec<usize> = (0..120).collect();
        order.reverse();
        let (frame, truth1) = observe(&s, &pose, &order, 1);
        let got = associate(&frame, &map, &pose, &weights(), 8.0, 0.2, &k()).unwrap();
        assert_eq!(got.len(), 120);
        for (id, ki) in got {
            assert_eq!(truth0[id], truth1[ki]);
        }
    }

    #[test]
    fn landmarks_behind_camera_excluded() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = scene(&mut rng, 20);
        let (frame, _) = observe(&s, &PoseSE3::identity(), &(0..20).collect::<Vec<_>>(), 0);
        let mut map = LocalMap::new();
        spawn_landmarks(&frame, &mut map, &k());
        // Turned around, every landmark is behind the camera.
        let flipped = PoseSE3::from_axis_angle(Vector3::new(0.0, std::f64::consts::PI, 0.0), Vector3::zeros());
        assert!(associate(&frame, &map, &flipped, &weights(), 1e6, 0.0, &k()).unwrap().is_empty());
    }

    #[test]
    fn random_descriptors_do_not_associate() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let s = scene(&mut rng, 150);
        let (first, _) = observe(&s, &PoseSE3::identity(), &(0..150).collect::<Vec<_>>(), 0);
        let mut map = LocalMap::new();
        spawn_landmarks(&first, &mut map, &k());
        let (mut frame, _) = observe(&s, &PoseSE3::identity(), &(0..150).collect::<Vec<_>>(), 1);
        let desc: Vec<f32> = (0..150).flat_map(|_| unit(&mut rng, 64)).collect();
        frame.features = FeatureSet::new(frame.features.keypoints().to_vec(), desc, 64).unwrap();
        let got = associate(&frame, &map, &PoseSE3::identity(), &weights(), 15.0, 0.2, &k()).unwrap();
        assert!(got.len() < 15, "{} spurious associations", got.len());
    }

    #[test]
    fn association_is_one_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let s = scene(&mut rng, 80);
        let (first, _) = observe(&s, &PoseSE3::identity(), &(0..80).collect::<Vec<_>>(), 0);
        let mut map = LocalMap::new();
        spawn_landmarks(&first, &mut map, &k());
        spawn_landmarks(&first, &mut map, &k());
        let got = associate(&first, &map, &PoseSE3::identity(), &weights(), 20.0, 0.0, &k()).unwrap();
        let mut ids: Vec<_> = got.iter().map(|g| g.0).collect();
        let mut kps: Vec<_> = got.iter().map(|g| g.1).collect();
        ids.sort();
        kps.sort();
        ids.dedup();
        kps.dedup();
        assert_eq!(ids.len(), got.len());
        assert_eq!(kps.len(), got.len());
    }

    #[test]
    fn visible_count() {
        let mut map = LocalMap::new();
        for p in [Vector3::new(0.0, 0.0, 2.0), Vector3::new(0.0, 0.0, -2.0), Vector3::new(10.0, 0.0, 1.0)] {
            map.insert(Landmark { position: p, descriptor: vec![1.0], first_frame: 0, last_seen: 0 });
        }
        assert_eq!(count_visible(&map, &PoseSE3::identity(), &k(), 320, 240), 1);
    }

    #[test]
    fn pruning_window() {
        let mut map = LocalMap::new();
        for f in [0, 5, 10] {
            map.insert(Landmark { position: Vector3::zeros(), descriptor: vec![1.0], first_frame: f, last_seen: f });
        }
        map.prune(25, 20);
        assert_eq!(map.len(), 2);
        map.mark_seen(1, 30);
        map.prune(40, 20);
        assert_eq!(map.landmarks().keys().copied().collect::<Vec<_>>(), vec![1]);
    }
}
