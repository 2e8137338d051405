use std::collections::BTreeMap;
use std::ops::RangeInclusive;

use rand::Rng as _;

use super::Sequence;
use crate::error::{Error, Result};
use crate::events::{voxelize, EventVoxelGrid};
use crate::geometry::{Frame, FramedTransform, Intrinsics, Pointmap, Pose};
use crate::rng::Rng;

/// Frame indices of a triplet within one sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TripletRef {
    pub sequence: usize,
    pub i0: usize,
    pub mid: usize,
    pub i1: usize,
}

/// Span `i1 - i0` and the quartile of `(mid - i0) / span`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BucketKey {
    pub span: usize,
    pub quartile: usize,
}

impl BucketKey {
    pub fn of(t: &TripletRef) -> Self {
        let span = t.i1 - t.i0;
        let quartile = ((4 * (t.mid - t.i0)) / span).min(3);
        Self { span, quartile }
    }
}

/// Every valid triplet, grouped so sampling is uniform over buckets first
/// and over members second.
#[derive(Clone, Debug)]
pub struct TripletPool {
    buckets: BTreeMap<BucketKey, Vec<TripletRef>>,
}

impl TripletPool {
    pub fn build(sequence_lengths: &[usize], spans: RangeInclusive<usize>) -> Result<Self> {
        if *spans.start() < 2 {
            return Err(Error::InvalidInput("span must be at least 2".into()));
        }
        let mut buckets: BTreeMap<BucketKey, Vec<TripletRef>> = BTreeMap::new();
        for (sequence, &len) in sequence_lengths.iter().enumerate() {
            for span in spans.clone() {
                for i0 in 0..len.saturating_sub(span) {
                    for mid in i0 + 1..i0 + span {
                        let t = TripletRef {
                            sequence,
                            i0,
                            mid,
                            i1: i0 + span,
                        };
                        buckets.entry(BucketKey::of(&t)).or_default().push(t);
                    }
                }
            }
        }
        for span in spans {
            for quartile in 0..4 {
                let key = BucketKey { span, quartile };
                if !buckets.contains_key(&key) {
                    log::debug!("triplet bucket span {span} quartile {quartile} is empty");
                }
            }
        }
        if buckets.is_empty() {
            return Err(Error::InvalidInput("sequences too short for any triplet".into()));
        }
        Ok(Self { buckets })
    }

    pub fn buckets(&self) -> impl Iterator<Item = (&BucketKey, &[TripletRef])> {
        self.buckets.iter().map(|(k, v)| (k, v.as_slice()))
    }

    pub fn bucket_count(&self) -> usize {
        self.buckets.len()
    }

    pub fn len(&self) -> usize {
        self.buckets.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.buckets.is_empty()
    }

    pub fn sample(&self, rng: &mut Rng) -> TripletRef {
        let b = rng.random_range(0..self.buckets.len());
        let members = self.buckets.values().nth(b).expect("index in range");
        members[rng.random_range(0..members.len())]
    }
}

/// One training example. The twin swaps the two end frames, exchanges the
/// forward and backward voxel grids and expresses ground truth in the other
/// end camera.
#[derive(Clone, Debug, PartialEq)]
pub struct TripletSample {
    pub sequence: usize,
    /// `[start, target, end]` in this sample's own order.
    pub indices: [usize; 3],
    pub timestamps: [f64; 3],
    pub frames: [Vec<f32>; 2],
    /// Events from start to target.
    pub voxel_forward: EventVoxelGrid,
    /// Events from end back to target, time-reversed.
    pub voxel_backward: EventVoxelGrid,
    /// Ground-truth pointmaps at `[start, target, end]` in world frame.
    pub gt_world: [Pointmap; 3],
    /// World-from-camera poses of the start and end frames.
    pub poses: [Pose; 2],
    pub intrinsics: Intrinsics,
}

impl TripletSample {
    pub fn from_sequence(seq: &Sequence, t: &TripletRef, bins: usize) -> Result<Self> {
        if !(t.i0 < t.mid && t.mid < t.i1 && t.i1 < seq.len()) {
            return Err(Error::InvalidInput(format!("bad triplet {t:?}")));
        }
        let ts = [seq.timestamps[t.i0], seq.timestamps[t.mid], seq.timestamps[t.i1]];
        let window = seq.events.window_normalized(ts[0], ts[2])?;
        let tau = (ts[1] - ts[0]) / (ts[2] - ts[0]);
        let (fwd, bwd) = window.split_and_reverse(tau)?;
        Ok(Self {
            sequence: t.sequence,
            indices: [t.i0, t.mid, t.i1],
            timestamps: ts,
            frames: [seq.frames[t.i0].clone(), seq.frames[t.i1].clone()],
            voxel_forward: voxelize(&fwd, bins)?,
            voxel_backward: voxelize(&bwd, bins)?,
            gt_world: [
                seq.world_pointmap(t.i0)?,
                seq.world_pointmap(t.mid)?,
                seq.world_pointmap(t.i1)?,
            ],
            poses: [*seq.pose(t.i0), *seq.pose(t.i1)],
            intrinsics: seq.intrinsics(),
        })
    }

    /// Normalized target time in `(0, 1)`.
    pub fn tau(&self) -> f64 {
        (self.timestamps[1] - self.timestamps[0]) / (self.timestamps[2] - self.timestamps[0])
    }

    pub fn twin(&self) -> Self {
        let [a, m, b] = self.gt_world.clone();
        Self {
            sequence: self.sequence,
            indices: [self.indices[2], self.indices[1], self.indices[0]],
            timestamps: [self.timestamps[2], self.timestamps[1], self.timestamps[0]],
            frames: [self.frames[1].clone(), self.frames[0].clone()],
            voxel_forward: self.voxel_backward.clone(),
            voxel_backward: self.voxel_forward.clone(),
            gt_world: [b, m, a],
            poses: [self.poses[1], self.poses[0]],
            intrinsics: self.intrinsics,
        }
    }

    /// Reference camera: the start frame.
    pub fn reference(&self) -> Frame {
        Frame::Camera(self.indices[0] as u32)
    }

    /// Ground truth at `[start, target, end]` in the start camera.
    pub fn gt_reference(&self) -> Result<[Pointmap; 3]> {
        let to_ref = FramedTransform::new(Frame::World, self.reference(), self.poses[0].inverse());
        Ok([
            self.gt_world[0].transformed(&to_ref)?,
            self.gt_world[1].transformed(&to_ref)?,
            self.gt_world[2].transformed(&to_ref)?,
        ])
    }
}
