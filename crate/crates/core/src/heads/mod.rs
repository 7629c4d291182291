//! Dense task decoders (pose, part segmentation, depth, normals), their
//! losses, and the desk skeleton/part vocabulary shared with the renderer.

mod head;
mod heatmap;
mod losses;
mod skeleton;

pub use head::{head_output_size, init_head, task_head_forward, Task, HEAD_WIDTH, TASKS};
pub use heatmap::{
    decode_keypoints, heatmap_to_image, image_to_heatmap, make_heatmaps, Heatmaps, Keypoints, Visibility,
    DEFAULT_SIGMA, POSE_STRIDE,
};
pub use losses::{
    class_weights_from_counts, depth_loss, normal_loss, normalize_depth, pose_loss, seg_loss, DEPTH_EPS, NORMAL_EPS,
};
pub use skeleton::{flip_permutation, DESK_FLIP_PAIRS, DESK_JOINTS, DESK_K, PART_CLASSES, PART_C};
