import init, { night_haze, spectrum, brightness } from "./pkg/sfsnid_web.js";

const SIZE = 128;
const $ = (id) => document.getElementById(id);
let hazy = null;

function draw(canvas, rgba, width, height) {
  const ctx = canvas.getContext("2d");
  ctx.putImageData(new ImageData(new Uint8ClampedArray(rgba), width, height), 0, 0);
}

// right half of a side-by-side RGBA buffer
function rightHalf(rgba, width, height) {
  const half = width / 2;
  const out = new Uint8Array(half * height * 4);
  for (let y = 0; y < height; y++) {
    out.set(rgba.subarray((y * width + half) * 4, (y + 1) * width * 4), y * half * 4);
  }
  return out;
}

function renderHaze() {
  const pair = night_haze(SIZE, Number($("seed").value), Number($("tmin").value),
    Number($("air").value), Number($("lights").value), Number($("glow").value));
  draw($("haze"), pair, 2 * SIZE, SIZE);
  hazy = rightHalf(pair, 2 * SIZE, SIZE);
  draw($("spectrum"), spectrum(hazy, SIZE, SIZE), 2 * SIZE, SIZE);
  renderBrightness();
}

function renderBrightness() {
  const out = brightness(hazy, SIZE, SIZE, Number($("window").value),
    Number($("kappa").value), Number($("xi").value));
  draw($("brightness"), out, 2 * SIZE, SIZE);
}

function guarded(fn) {
  return () => {
    document.querySelectorAll("output").forEach((o) => { o.value = $(o.htmlFor.value).value; });
    try {
      fn();
      $("error").textContent = "";
    } catch (e) {
      $("error").textContent = String(e);
    }
  };
}

await init();
for (const id of ["seed", "tmin", "air", "lights", "glow"]) $(id).addEventListener("input", guarded(renderHaze));
for (const id of ["window", "kappa", "xi"]) $(id).addEventListener("input", guarded(renderBrightness));
guarded(renderHaze)();
