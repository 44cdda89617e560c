mod common;

use proptest::prelude::*;
use tactile_dog::frame::container::{decode_window, encode_window, read_dataset, write_dataset};
use tactile_dog::frame::{
    assemble_canvas, decode_frame, encode_frame, encoded_len, BoardFrame, FrameError, GestureWindow, TactileCanvas,
    CANVAS_PIXELS, FRAME_HEADER_LEN,
};
use tactile_dog::frame::{layout, CANVAS_COLS, CANVAS_ROWS, TILE};
use tactile_dog::pipeline::protocol::{frame_message, read_message, ClientMessage, Control, Incoming};
use tactile_dog::pipeline::{decode_record, encode_record, GestureRecord, Record};
use tactile_dog::taxonomy::ClassId;

fn board() -> impl Strategy<Value = BoardFrame> {
    (0u8..8, 1u16..40, 1u16..40, any::<u64>()).prop_flat_map(|(id, rows, cols, tick)| {
        proptest::collection::vec(any::<u8>(), rows as usize * cols as usize)
            .prop_map(move |s| BoardFrame::new(id, rows, cols, tick, s).unwrap())
    })
}

fn canvas() -> impl Strategy<Value = TactileCanvas> {
    (any::<u64>(), proptest::collection::vec(any::<u8>(), CANVAS_PIXELS))
        .prop_map(|(t, p)| TactileCanvas::from_pixels(t, p).unwrap())
}

/// `c` with the pixels no sensor covers set to zero.
fn masked(c: &TactileCanvas) -> TactileCanvas {
    let mask = layout::sensor_mask();
    let mut out = c.clone();
    for row in 0..CANVAS_ROWS {
        for col in 0..CANVAS_COLS {
            let (board, r, k) = layout::board_of(row, col);
            if !mask[board as usize * TILE * TILE + r * TILE + k] {
                out.set(row, col, 0);
            }
        }
    }
    out
}

proptest! {
    #[test]
    fn frame_round_trip(f in board()) {
        let bytes = encode_frame(&f);
        prop_assert_eq!(bytes.len(), encoded_len(f.rows(), f.cols()));
        prop_assert_eq!(decode_frame(&bytes).unwrap(), f);
    }

    #[test]
    fn any_byte_flip_is_rejected(f in board(), at in any::<prop::sample::Index>(), mask in 1u8..) {
        let mut bytes = encode_frame(&f);
        let i = at.index(bytes.len());
        bytes[i] ^= mask;
        prop_assert!(decode_frame(&bytes).is_err());
    }

    #[test]
    fn truncation_and_padding_are_rejected(f in board(), cut in any::<prop::sample::Index>(), extra in 1usize..8) {
        let bytes = encode_frame(&f);
        let n = cut.index(bytes.len());
        prop_assert!(decode_frame(&bytes[..n]).is_err());
        let mut long = bytes.clone();
        long.extend(std::iter::repeat_n(0, extra));
        let is_length_error = matches!(decode_frame(&long), Err(FrameError::Length { .. }));
        prop_assert!(is_length_error);
    }

    #[test]
    fn garbage_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..2000)) {
        let _ = decode_frame(&bytes);
        let _ = ClientMessage::decode_body(&bytes);
        let _ = decode_record(&bytes);
        let _ = decode_window(&bytes);
    }

    #[test]
    fn header_with_garbage_body_never_panics(f in board(), tail in proptest::collection::vec(any::<u8>(), 0..64)) {
        let mut bytes = encode_frame(&f)[..FRAME_HEADER_LEN].to_vec();
        bytes.extend(tail);
        let _ = decode_frame(&bytes);
    }

    #[test]
    fn canvas_split_and_join(c in canvas()) {
        let boards = c.disassemble();
        prop_assert_eq!(boards.len(), 8);
        prop_assert!(boards.iter().all(|b| b.tick() == c.tick && b.rows() == 32 && b.cols() == 32));
        let mut decoded: Vec<_> = boards.iter().map(|b| decode_frame(&encode_frame(b)).unwrap()).collect();
        decoded.reverse();
        prop_assert_eq!(assemble_canvas(&decoded).unwrap(), masked(&c));
    }

    #[test]
    fn client_messages_round_trip(f in board(), reset in any::<bool>()) {
        let control = if reset { Control::Reset } else { Control::Info };
        for m in [ClientMessage::Frame(f.clone()), ClientMessage::Control(control)] {
            let framed = frame_message(&m.encode_body());
            let Incoming::Body(body) = read_message(&mut framed.as_slice(), 1 << 20).unwrap() else {
                return Err(TestCaseError::fail("expected a body"));
            };
            prop_assert_eq!(ClientMessage::decode_body(&body).unwrap(), m);
        }
    }

    #[test]
    fn records_round_trip(c in canvas(), conf in 0.0f64..=1.0, start in 0u64..1000) {
        let g = Record::Gesture(GestureRecord {
            tick: start + 30,
            start_tick: start,
            end_tick: start + 25,
            class: "pat_back".into(),
            kind: "pat".into(),
            part: Some("back".into()),
            confidence: conf,
        });
        for r in [Record::Frame(c.clone()), g] {
            prop_assert_eq!(decode_record(&encode_record(&r)).unwrap(), r);
        }
    }
}

#[test]
fn thousand_frames_round_trip() {
    let mut r = common::rng(11);
    for i in 0..1000u64 {
        let c = common::random_stream(&mut r, 1).pop().unwrap();
        let b = &c.disassemble()[(i % 8) as usize];
        assert_eq!(&decode_frame(&encode_frame(b)).unwrap(), b);
    }
}

#[test]
fn missing_and_duplicate_boards() {
    let c = TactileCanvas::zeros(4);
    let mut boards = c.disassemble();
    boards.pop();
    assert!(matches!(assemble_canvas(&boards), Err(FrameError::MissingBoards(b)) if b == [7]));
    boards.push(boards[0].clone());
    assert!(assemble_canvas(&boards).is_err());
    let mut skewed = c.disassemble();
    skewed[3] = TactileCanvas::zeros(5).disassemble()[3].clone();
    assert!(matches!(assemble_canvas(&skewed), Err(FrameError::Sync { .. })));
}

#[test]
fn dataset_container_round_trip() {
    let mut r = common::rng(2);
    let windows: Vec<GestureWindow> = (0..5)
        .map(|i| {
            let frames = common::random_stream(&mut r, 20)
                .into_iter()
                .enumerate()
                .map(|(k, f)| TactileCanvas::from_pixels(i * 100 + k as u64, f.pixels().to_vec()).unwrap())
                .collect();
            GestureWindow::new(frames, Some(ClassId(i as usize))).unwrap()
        })
        .collect();
    for w in &windows {
        assert_eq!(&decode_window(&encode_window(w)).unwrap(), w);
    }
    let mut buf = std::io::Cursor::new(Vec::new());
    assert_eq!(write_dataset(&mut buf, windows.clone()).unwrap(), 5);
    assert_eq!(read_dataset(buf.get_ref().as_slice()).unwrap(), windows);
    let cut = &buf.get_ref()[..buf.get_ref().len() - 7];
    assert!(read_dataset(cut).is_err());
}
