import init, { ImageDemo, CubeDemo, synthetic_image } from "./pkg/vbgs_web.js";

const SIZE = 64;
const $ = (id) => document.getElementById(id);

function paint(canvas, rgba, w = SIZE, h = SIZE) {
  canvas.width = w;
  canvas.height = h;
  canvas.getContext("2d").putImageData(new ImageData(new Uint8ClampedArray(rgba), w, h), 0, 0);
}

const frame = () => new Promise(requestAnimationFrame);

// ---- image

let image = null;

async function filePixels(file) {
  const bitmap = await createImageBitmap(file);
  const c = new OffscreenCanvas(SIZE, SIZE);
  const ctx = c.getContext("2d");
  ctx.drawImage(bitmap, 0, 0, SIZE, SIZE);
  return ctx.getImageData(0, 0, SIZE, SIZE).data;
}

function showImage(note) {
  paint($("img-model"), image.render());
  const p = image.psnr();
  $("img-status").value =
    `${note}: PSNR ${Number.isFinite(p) ? p.toFixed(2) : "inf"} dB, ` +
    `${image.used_components()} components in use, ` +
    `patches ${image.patches_seen()}/${image.patch_count()}`;
}

async function loadImage() {
  const file = $("img-file").files[0];
  const pixels = file ? await filePixels(file) : synthetic_image(BigInt($("img-seed").value), SIZE);
  paint($("img-target"), pixels);
  image?.free();
  image = new ImageDemo(pixels, SIZE, SIZE, Number($("img-k").value), 0n);
  showImage("initialized");
}

$("img-load").onclick = loadImage;
$("img-reset").onclick = () => { image.reset(); showImage("reset"); };
$("img-iter").onclick = () => {
  const elbo = image.batch_iteration();
  showImage(`ELBO ${elbo.toFixed(1)}`);
};
$("img-stream").onclick = async () => {
  while (image.stream_step()) {
    showImage("streaming");
    await frame();
  }
  showImage("all patches seen");
};

// ---- cube

let cube = null;
let running = false;
let view = { azimuth: 0.9, elevation: 0.35 };

function showCube() {
  paint($("cube-model"), cube.render(view.azimuth, view.elevation));
  $("cube-status").value =
    `views ${cube.views_seen()}/${cube.view_count()}, held-out PSNR ${cube.psnr().toFixed(2)} dB, ` +
    `${cube.used_components()} components in use`;
}

async function runCube() {
  running = true;
  $("cube-pause").disabled = false;
  while (running && cube.step()) {
    paint($("cube-view"), cube.last_view());
    showCube();
    await frame();
  }
  running = false;
  $("cube-pause").disabled = true;
}

$("cube-start").onclick = () => {
  running = false;
  cube?.free();
  cube = new CubeDemo(20, SIZE, Number($("cube-k").value), 0n, $("cube-reassign").checked);
  showCube();
  runCube();
};
$("cube-pause").onclick = () => { running = false; };

let drag = null;
$("cube-model").onpointerdown = (e) => { drag = { x: e.clientX, y: e.clientY, ...view }; };
window.onpointerup = () => { drag = null; };
window.onpointermove = (e) => {
  if (!drag || !cube) return;
  view.azimuth = drag.azimuth + (e.clientX - drag.x) * 0.01;
  view.elevation = Math.max(-1.4, Math.min(1.4, drag.elevation + (e.clientY - drag.y) * 0.01));
  if (!running) showCube();
};

await init();
await loadImage();
