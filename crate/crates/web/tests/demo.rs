use lanefollow_web::{lambda_curve, Demo};

#[test]
fn camera_and_top_down_buffers_have_rgba_size() {
    let mut demo = Demo::new("loop").unwrap();
    demo.place(0.3, 0.05, 10.0);
    let cam = demo.camera_rgba();
    assert_eq!(cam.len(), demo.camera_width() * demo.camera_height() * 4);
    assert!(cam.chunks_exact(4).all(|p| p[3] == 255));
    let top = demo.top_down_rgba(30.0);
    assert_eq!(top.len(), demo.top_down_width(30.0) * demo.top_down_height(30.0) * 4);
}

#[test]
fn placement_sets_the_lane_pose() {
    let mut demo = Demo::new("loop").unwrap();
    demo.place(0.0, 0.04, -12.0);
    let p = demo.pose();
    assert!((p[0] - 0.04).abs() < 1e-9, "{p:?}");
    assert!((p[1] + 12f64.to_radians()).abs() < 1e-9, "{p:?}");
    assert_eq!(p[4], 1.0);
}

#[test]
fn pd_drive_stays_on_road_and_randomized_look_differs() {
    let mut demo = Demo::new("loop").unwrap();
    let plain = demo.camera_rgba();
    assert!(demo.pd_step(150));
    assert_eq!(demo.pose()[3], 1.0);
    demo.place(0.0, 0.0, 0.0);
    demo.randomize(42);
    assert_ne!(demo.camera_rgba(), plain);
    demo.randomize(0);
    assert_eq!(demo.camera_rgba(), plain);
}

#[test]
fn lambda_curve_spans_both_tails() {
    let pts = lambda_curve(45.0, 0.1, 101);
    assert_eq!(pts.len(), 202);
    assert!((pts[0] + 90.0).abs() < 1e-9 && (pts[200] - 90.0).abs() < 1e-9);
    assert!((pts[101] - 1.0).abs() < 1e-12);
    assert!((pts[1] + 0.1).abs() < 1e-12);
}
