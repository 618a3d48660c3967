import { StudyApi } from "./api";
import { SessionController, MediaView } from "./controller";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

const api = new StudyApi("");

const view: MediaView = {
  show(clipUrl, label) {
    const img = el<HTMLImageElement>("clip");
    // cache-buster restarts the GIF from its first frame
    img.src = `${clipUrl}&t=${Date.now()}`;
    el<HTMLDivElement>("teach-label").textContent = label ?? "";
    el<HTMLDivElement>("teach-label").style.display = label ? "block" : "none";
  },
};

const controller = new SessionController(api, view);

function setStatus(text: string): void {
  el<HTMLDivElement>("status").textContent = text;
}

function refresh(): void {
  const flow = controller.flow;
  const teaching = el<HTMLDivElement>("teaching-controls");
  const transcribing = el<HTMLDivElement>("transcription-controls");
  const done = el<HTMLDivElement>("done-panel");
  teaching.style.display = flow.phase === "TEACHING" ? "block" : "none";
  transcribing.style.display = flow.phase === "TRANSCRIBING" ? "block" : "none";
  done.style.display = flow.phase === "DONE" ? "block" : "none";
  if (flow.phase === "TEACHING") {
    setStatus(`Teaching: gesture ${flow.teachingIndex + 1} of ${flow.session.teaching.length}`
      + ` (viewpoint ${flow.session.viewpoint})`);
  } else if (flow.phase === "TRANSCRIBING") {
    const p = flow.progress;
    setStatus(`Conversation ${p.conversation + 1}: gesture ${p.within + 1}`
      + ` (answer ${p.item + 1} of ${p.total})`);
    el<HTMLSelectElement>("answer").value = "";
    el<HTMLInputElement>("confidence").value = "5";
    el<HTMLSpanElement>("confidence-value").textContent = "5";
    updateSubmitState();
  } else {
    setStatus("All conversations transcribed. Thank you!");
  }
}

function updateSubmitState(): void {
  const chosen = el<HTMLSelectElement>("answer").value;
  el<HTMLButtonElement>("submit").disabled = chosen === "";
}

async function main(): Promise<void> {
  await controller.start();
  const dropdown = el<HTMLSelectElement>("answer");
  dropdown.innerHTML = '<option value="">choose a message</option>';
  const names = controller.session.teaching.map((t) => t.message).sort();
  for (const name of names) {
    const option = document.createElement("option");
    option.value = name;
    option.textContent = name.replaceAll("_", " ");
    dropdown.appendChild(option);
  }
  dropdown.addEventListener("change", updateSubmitState);

  el<HTMLInputElement>("confidence").addEventListener("input", (event) => {
    const value = (event.target as HTMLInputElement).value;
    el<HTMLSpanElement>("confidence-value").textContent = value;
  });

  el<HTMLButtonElement>("replay").addEventListener("click", () => {
    const img = el<HTMLImageElement>("clip");
    img.src = img.src.replace(/&t=\d+$/, `&t=${Date.now()}`);
  });

  el<HTMLButtonElement>("teach-next").addEventListener("click", async () => {
    el<HTMLButtonElement>("teach-next").disabled = true;
    try {
      await controller.completeTeachingItem();
      refresh();
    } finally {
      el<HTMLButtonElement>("teach-next").disabled = false;
    }
  });

  el<HTMLButtonElement>("submit").addEventListener("click", async () => {
    const message = dropdown.value;
    const confidence = parseInt(el<HTMLInputElement>("confidence").value, 10);
    if (!message) return;
    el<HTMLButtonElement>("submit").disabled = true;
    try {
      await controller.submitAnswer(message, confidence);
      refresh();
    } catch (error) {
      el<HTMLDivElement>("error-banner").textContent = String(error);
      el<HTMLDivElement>("error-banner").style.display = "block";
      el<HTMLButtonElement>("submit").disabled = false;
      return;
    }
    el<HTMLDivElement>("error-banner").style.display = "none";
  });

  refresh();
}

main().catch((error) => setStatus(`failed to start session: ${error}`));
