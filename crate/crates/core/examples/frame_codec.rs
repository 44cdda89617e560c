//! Splits a canvas into board frames, encodes them and puts the canvas
//! back together.

use tactile_dog::frame::{assemble_canvas, decode_frame, encode_frame, TactileCanvas, FRAME_HEADER_LEN};

fn main() {
    let mut canvas = TactileCanvas::zeros(42);
    for r in 10..14 {
        for c in 20..26 {
            canvas.set(r, c, 180);
        }
    }
    let boards = canvas.disassemble();
    let encoded: Vec<Vec<u8>> = boards.iter().map(encode_frame).collect();
    println!(
        "{} boards, {} bytes each ({} header, 1024 samples, 4 CRC)",
        encoded.len(),
        encoded[0].len(),
        FRAME_HEADER_LEN
    );
    println!("board 0 header: {:02x?}", &encoded[0][..FRAME_HEADER_LEN]);

    let decoded: Vec<_> = encoded.iter().map(|b| decode_frame(b).expect("intact")).collect();
    let back = assemble_canvas(&decoded).expect("all boards present");
    assert_eq!(back, canvas);
    println!("canvas at tick {} reassembled", back.tick);

    let mut broken = encoded[3].clone();
    broken[100] ^= 0x40;
    println!("flipped bit: {}", decode_frame(&broken).unwrap_err());
}
