use std::ffi::CStr;
use std::ptr;

use evdeblur_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(evdb_last_error()).to_string_lossy().into_owned() }
}

fn stream_from_text(text: &str) -> *mut EvdbStream {
    let mut s = ptr::null_mut();
    let st = unsafe { evdb_stream_parse(text.as_ptr(), text.len(), 0, 0, &mut s) };
    assert_eq!(st, EvdbStatus::Ok, "{}", last_error());
    s
}

#[test]
fn parse_write_round_trip() {
    let s = stream_from_text("# 4 3 0 100\n50 1 2 1\n10 0 0 -1\n");
    assert_eq!(unsafe { evdb_stream_len(s) }, 2);
    let mut buf = EvdbBuffer { data: ptr::null_mut(), len: 0 };
    assert_eq!(unsafe { evdb_stream_write(s, EvdbFormat::Binary, &mut buf) }, EvdbStatus::Ok);
    assert_eq!(buf.len, 24 + 2 * 16);
    let mut back = ptr::null_mut();
    assert_eq!(unsafe { evdb_stream_parse(buf.data, buf.len, 0, 0, &mut back) }, EvdbStatus::Ok);
    assert_eq!(unsafe { evdb_stream_len(back) }, 2);
    unsafe {
        evdb_buffer_free(buf);
        evdb_stream_free(back);
        evdb_stream_free(s);
    }
}

#[test]
fn errors_map_to_codes_and_messages() {
    let text = "# 4 3 0 100\n50 9 2 1\n";
    let mut s = ptr::null_mut();
    let st = unsafe { evdb_stream_parse(text.as_ptr(), text.len(), 0, 0, &mut s) };
    assert_eq!(st, EvdbStatus::Parse);
    assert!(s.is_null());
    assert!(last_error().contains("outside"));
    assert_eq!(unsafe { evdb_stream_parse(ptr::null(), 3, 0, 0, &mut s) }, EvdbStatus::NullPointer);
    let good = stream_from_text("# 4 3 0 100\n");
    let mut v = ptr::null_mut();
    assert_eq!(unsafe { evdb_voxel_build(good, 0, &mut v) }, EvdbStatus::InvalidArgument);
    unsafe { evdb_stream_free(good) };
    // Freeing null handles is a no-op.
    unsafe {
        evdb_stream_free(ptr::null_mut());
        evdb_image_free(ptr::null_mut());
    }
}

#[test]
fn arrays_voxel_and_upscale() {
    let t = [10u64, 20, 30, 90];
    let x = [0u16, 1, 1, 0];
    let y = [0u16, 0, 1, 1];
    let p = [1i8, 1, -1, 1];
    let mut s = ptr::null_mut();
    let st = unsafe { evdb_stream_from_arrays(2, 2, 0, 100, t.as_ptr(), x.as_ptr(), y.as_ptr(), p.as_ptr(), 4, &mut s) };
    assert_eq!(st, EvdbStatus::Ok);
    let bad = [1i8, 0, 1, 1];
    let mut s2 = ptr::null_mut();
    let st = unsafe { evdb_stream_from_arrays(2, 2, 0, 100, t.as_ptr(), x.as_ptr(), y.as_ptr(), bad.as_ptr(), 4, &mut s2) };
    assert_eq!(st, EvdbStatus::Parse);

    let mut v = ptr::null_mut();
    assert_eq!(unsafe { evdb_voxel_build(s, 2, &mut v) }, EvdbStatus::Ok);
    let (mut w, mut h, mut b) = (0, 0, 0);
    unsafe { evdb_voxel_dims(v, &mut w, &mut h, &mut b) };
    assert_eq!((w, h, b), (2, 2, 2));
    let mut cells = [0.0; 8];
    assert_eq!(unsafe { evdb_voxel_copy(v, cells.as_mut_ptr(), 3) }, EvdbStatus::BufferTooSmall);
    assert_eq!(unsafe { evdb_voxel_copy(v, cells.as_mut_ptr(), 8) }, EvdbStatus::Ok);
    assert_eq!(cells.iter().sum::<f64>(), 2.0);
    let mut up = ptr::null_mut();
    assert_eq!(unsafe { evdb_voxel_upscale(v, 8, 8, &mut up) }, EvdbStatus::Ok);
    unsafe { evdb_voxel_dims(up, &mut w, &mut h, &mut b) };
    assert_eq!((w, h, b), (8, 8, 2));
    unsafe {
        evdb_voxel_free(up);
        evdb_voxel_free(v);
        evdb_stream_free(s);
    }
}

#[test]
fn points_are_seeded_and_normalised() {
    let s = stream_from_text("# 8 8 0 1000\n1 1 1 1\n100 7 7 -1\n400 3 3 1\n999 2 5 1\n");
    let copy = |seed| {
        let mut pc = ptr::null_mut();
        assert_eq!(unsafe { evdb_points_build(s, 3, 5, seed, true, &mut pc) }, EvdbStatus::Ok);
        let (mut b, mut m) = (0, 0);
        unsafe { evdb_points_dims(pc, &mut b, &mut m) };
        let mut v = vec![0.0; 3 * b * m];
        assert_eq!(unsafe { evdb_points_copy(pc, v.as_mut_ptr(), v.len()) }, EvdbStatus::Ok);
        unsafe { evdb_points_free(pc) };
        v
    };
    let a = copy(4);
    assert_eq!(a.len(), 45);
    assert!(a.iter().all(|v| (0.0..=1.0).contains(v)));
    assert_eq!(a, copy(4));
    unsafe { evdb_stream_free(s) };
}

#[test]
fn deblur_metrics_and_sampling() {
    let s = stream_from_text("# 16 16 0 1000000\n500000 3 3 1\n");
    let sharp: Vec<f64> = (0..256).map(|i| 0.2 + (i % 7) as f64 * 0.1).collect();
    let mut img = ptr::null_mut();
    assert_eq!(unsafe { evdb_image_new(16, 16, sharp.as_ptr(), &mut img) }, EvdbStatus::Ok);
    let (mut blurry, mut back) = (ptr::null_mut(), ptr::null_mut());
    assert_eq!(unsafe { evdb_edi_synthesize(img, s, 0.2, 1000, &mut blurry) }, EvdbStatus::Ok);
    assert_eq!(unsafe { evdb_edi_deblur(blurry, s, 0.2, 1000, &mut back) }, EvdbStatus::Ok);
    let mut out = vec![0.0; 256];
    unsafe { evdb_image_copy(back, out.as_mut_ptr(), 256) };
    assert!(out.iter().zip(&sharp).all(|(a, b)| (a - b).abs() < 1e-12));

    let mut v = 0.0;
    assert_eq!(unsafe { evdb_psnr(img, img, 1.0, &mut v) }, EvdbStatus::Ok);
    assert!(v.is_infinite());
    assert_eq!(unsafe { evdb_ssim(img, img, 1.0, &mut v) }, EvdbStatus::Ok);
    assert_eq!(v, 1.0);
    let mut report = EvdbMetricReport::default();
    assert_eq!(unsafe { evdb_total_loss(img, blurry, 10.0, 1.0, 0.1, 1.0, 3, &mut report) }, EvdbStatus::Ok);
    assert!(report.total > 0.0);
    assert_eq!(unsafe { evdb_total_loss(img, img, 0.0, 0.0, 0.0, 1.0, 3, &mut report) }, EvdbStatus::InvalidArgument);

    let mut crop = EvdbCrop::default();
    assert_eq!(unsafe { evdb_density_crop(s, 16, 16, 8, 0.8, 4, 1, &mut crop) }, EvdbStatus::Ok);
    assert_eq!(crop.side, 8);
    assert_eq!(crop.cell_density, 1.0);
    assert_eq!(unsafe { evdb_density_crop(s, 16, 16, 32, 0.8, 4, 1, &mut crop) }, EvdbStatus::InvalidArgument);

    assert_eq!(evdb_gaussian_weight(2.0, 0.0), 1.0);
    assert!((evdb_gaussian_weight(2.0, 2.0) - (-0.5f64).exp()).abs() < 1e-15);

    let pts = [0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.5, 0.0, 0.0];
    let mut idx = [usize::MAX; 5];
    assert_eq!(unsafe { evdb_fps(pts.as_ptr(), 3, 5, 9, idx.as_mut_ptr()) }, EvdbStatus::Ok);
    let mut head = idx[..3].to_vec();
    head.sort_unstable();
    assert_eq!(head, vec![0, 1, 2]);
    assert_eq!(&idx[3..], &idx[..2]);

    unsafe {
        evdb_image_free(back);
        evdb_image_free(blurry);
        evdb_image_free(img);
        evdb_stream_free(s);
    }
}
