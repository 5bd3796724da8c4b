// DOM wiring: every handler is a thin bridge between the InspectClient and
// the pure session/filter logic in state.ts.

import { ApiError, InspectClient, JobInfo } from './api.js';
import {
  Detection,
  ReviewSession,
  classSummaries,
  createSession,
  currentImage,
  filterDetections,
  flattenPredictions,
  nextImage,
  prevImage,
  segregationCounts,
  setImages,
  setThreshold,
  toggleClass,
  totalVisible,
} from './state.js';

const byId = <T extends HTMLElement>(doc: Document, id: string): T => {
  const el = doc.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
};

export function wire(doc: Document, client: InspectClient): void {
  const uploadInput = byId<HTMLInputElement>(doc, 'upload-input');
  const uploadButton = byId<HTMLButtonElement>(doc, 'upload-button');
  const uploadError = byId<HTMLDivElement>(doc, 'upload-error');
  const rejectedList = byId<HTMLUListElement>(doc, 'rejected-list');
  const datasetSelect = byId<HTMLSelectElement>(doc, 'dataset-select');
  const refreshButton = byId<HTMLButtonElement>(doc, 'refresh-datasets');
  const runDetect = byId<HTMLButtonElement>(doc, 'run-detect');
  const jobList = byId<HTMLDivElement>(doc, 'job-list');
  const overlayImage = byId<HTMLImageElement>(doc, 'overlay-image');
  const slider = byId<HTMLInputElement>(doc, 'threshold-slider');
  const sliderValue = byId<HTMLSpanElement>(doc, 'threshold-value');
  const prevButton = byId<HTMLButtonElement>(doc, 'prev-image');
  const nextButton = byId<HTMLButtonElement>(doc, 'next-image');
  const imageLabel = byId<HTMLSpanElement>(doc, 'image-label');
  const cleanBadge = byId<HTMLSpanElement>(doc, 'clean-badge');
  const toggles = byId<HTMLDivElement>(doc, 'class-toggles');
  const cards = byId<HTMLDivElement>(doc, 'summary-cards');
  const tableBody = byId<HTMLTableSectionElement>(doc, 'detection-rows');
  const exportButton = byId<HTMLButtonElement>(doc, 'export-csv');
  const segregateButton = byId<HTMLButtonElement>(doc, 'segregate');
  const exportStatus = byId<HTMLDivElement>(doc, 'export-status');

  const session: ReviewSession = createSession();
  let detections = new Map<string, Detection[]>();

  const showError = (target: HTMLElement, error: unknown) => {
    target.textContent =
      error instanceof ApiError ? `${error.code}: ${error.message}` : String(error);
  };

  async function refreshDatasets(): Promise<void> {
    const datasets = await client.listDatasets();
    datasetSelect.replaceChildren(
      ...datasets.map((d) => {
        const option = doc.createElement('option');
        option.value = d.id;
        option.textContent = `${d.id} (${d.image_count} images)`;
        return option;
      })
    );
    if (session.dataset) datasetSelect.value = session.dataset;
  }

  async function selectDataset(datasetId: string): Promise<void> {
    const images = await client.listImages(datasetId);
    setImages(session, datasetId, images.map((i) => i.id));
    session.artifact = null;
    detections = new Map();
    render();
  }

  function renderJob(job: JobInfo): HTMLDivElement {
    const card = doc.createElement('div');
    card.className = `job-card job-${job.status}`;
    const fraction = job.progress.total ? job.progress.done / job.progress.total : 0;
    card.innerHTML = `
      <span class="job-kind">${job.kind}</span>
      <progress max="1" value="${fraction}"></progress>
      <span class="job-status">${job.status} ${job.progress.done}/${job.progress.total}</span>
      ${job.error ? `<span class="job-error">${job.error}</span>` : ''}
    `;
    return card;
  }

  async function refreshJobs(): Promise<void> {
    const jobs = await client.listJobs();
    jobList.replaceChildren(...jobs.map(renderJob));
  }

  async function runJob(kind: string, params: Record<string, unknown>): Promise<JobInfo> {
    const jobId = await client.submitJob(kind, params);
    try {
      return await client.waitForJob(jobId, {
        onProgress: () => void refreshJobs().catch(() => undefined),
      });
    } catch (error) {
      if (error instanceof ApiError && error.code === 'poll_timeout') {
        exportStatus.textContent = `job ${jobId} looks stale — press refresh to re-poll`;
      }
      throw error;
    }
  }

  function renderToggles(): void {
    const labels = [...new Set([...detections.values()].flat().map((d) => d.label))].sort();
    toggles.replaceChildren(
      ...labels.map((label) => {
        const wrap = doc.createElement('label');
        const box = doc.createElement('input');
        box.type = 'checkbox';
        box.checked = !session.hiddenClasses.has(label);
        box.addEventListener('change', () => {
          toggleClass(session, label);
          render();
        });
        wrap.append(box, doc.createTextNode(` ${label}`));
        return wrap;
      })
    );
  }

  function render(): void {
    sliderValue.textContent = session.threshold.toFixed(2);
    slider.value = String(session.threshold);
    const image = currentImage(session);
    imageLabel.textContent = image
      ? `${image} (${session.cursor + 1}/${session.images.length})`
      : 'no image';

    if (image && session.dataset && session.artifact) {
      // Assigning src supersedes any in-flight overlay request on navigate.
      overlayImage.src = client.overlayUrl(
        session.dataset,
        image,
        session.artifact,
        session.threshold
      );
    }

    const perImage = image ? detections.get(image) ?? [] : [];
    const visible = filterDetections(perImage, session.threshold, session.hiddenClasses);
    cleanBadge.textContent = visible.length
      ? ''
      : `clean at threshold ${session.threshold.toFixed(2)}`;

    tableBody.replaceChildren(
      ...visible.map((d) => {
        const [x0, y0, x1, y1] = d.box;
        const row = doc.createElement('tr');
        const length = Math.max(x1 - x0, y1 - y0);
        const width = Math.min(x1 - x0, y1 - y0);
        row.innerHTML = `
          <td>${d.label}</td>
          <td>${d.score.toFixed(3)}</td>
          <td>[${x0.toFixed(1)}, ${y0.toFixed(1)}, ${x1.toFixed(1)}, ${y1.toFixed(1)}]</td>
          <td>${length.toFixed(1)}</td>
          <td>${width.toFixed(1)}</td>
        `;
        return row;
      })
    );

    cards.replaceChildren(
      ...classSummaries(detections, session.threshold).map((card) => {
        const el = doc.createElement('div');
        el.className = 'summary-card';
        el.dataset.label = card.label;
        el.dataset.count = String(card.count);
        el.innerHTML = `<b>${card.label}</b> ${card.count} @ mean ${card.meanScore.toFixed(3)}`;
        return el;
      })
    );
  }

  uploadButton.addEventListener('click', async () => {
    const file = uploadInput.files?.[0];
    if (!file) {
      uploadError.textContent = 'choose a zip first';
      return;
    }
    uploadError.textContent = '';
    rejectedList.replaceChildren();
    try {
      const info = await client.uploadDataset(file.name, file);
      rejectedList.replaceChildren(
        ...info.rejected.map((r) => {
          const item = doc.createElement('li');
          item.textContent = `${r.file}: ${r.reason}`;
          return item;
        })
      );
      await refreshDatasets();
      await selectDataset(info.id);
    } catch (error) {
      showError(uploadError, error);
    }
  });

  refreshButton.addEventListener('click', () => {
    void refreshDatasets().catch((e) => showError(uploadError, e));
    void refreshJobs().catch(() => undefined);
  });

  datasetSelect.addEventListener('change', () => {
    void selectDataset(datasetSelect.value).catch((e) => showError(uploadError, e));
  });

  runDetect.addEventListener('click', async () => {
    if (!session.dataset) return;
    try {
      const job = await runJob('detect', { dataset: session.dataset });
      await refreshJobs();
      if (job.status === 'failed') {
        exportStatus.textContent = `detect failed: ${job.error}`;
        return;
      }
      session.artifact = String((job.result as { artifact: string }).artifact);
      detections = flattenPredictions(await client.fetchPredictions(session.artifact));
      renderToggles();
      render();
    } catch (error) {
      showError(exportStatus, error);
    }
  });

  slider.addEventListener('input', () => {
    setThreshold(session, Number(slider.value));
    render();
  });

  prevButton.addEventListener('click', () => {
    prevImage(session);
    render();
  });
  nextButton.addEventListener('click', () => {
    nextImage(session);
    render();
  });
  doc.addEventListener('keydown', (event) => {
    if (event.key === 'ArrowLeft') prevImage(session);
    else if (event.key === 'ArrowRight') nextImage(session);
    else return;
    render();
  });

  exportButton.addEventListener('click', async () => {
    if (!session.artifact) return;
    try {
      const job = await runJob('export_csv', {
        predictions: session.artifact,
        score_threshold: session.threshold,
      });
      if (job.status === 'failed') {
        exportStatus.textContent = `export failed: ${job.error}`;
        return;
      }
      const result = job.result as { artifact: string; rows: number };
      const expected = totalVisible(detections, session.threshold);
      exportStatus.innerHTML = `CSV ready: <a href="${client.artifactUrl(result.artifact)}"
        download>defects.csv</a> — ${result.rows} rows (cards sum to ${expected})`;
    } catch (error) {
      showError(exportStatus, error);
    }
  });

  segregateButton.addEventListener('click', async () => {
    if (!session.dataset || !session.artifact) return;
    try {
      const job = await runJob('segregate', {
        dataset: session.dataset,
        predictions: session.artifact,
        score_threshold: session.threshold,
      });
      if (job.status === 'failed') {
        exportStatus.textContent = `segregate failed: ${job.error}`;
        return;
      }
      const result = job.result as { artifact: string; folders: Record<string, number> };
      const local = segregationCounts(detections, session.threshold);
      const parts = Object.entries(result.folders)
        .map(([folder, count]) => `${folder}: ${count}${local[folder] === count ? '' : ' (!)'}`)
        .join(', ');
      exportStatus.innerHTML = `segregated: ${parts} — <a
        href="${client.artifactUrl(result.artifact)}" download>zip</a>`;
    } catch (error) {
      showError(exportStatus, error);
    }
  });

  void refreshDatasets().catch((e) => showError(uploadError, e));
  void refreshJobs().catch(() => undefined);
  render();
}
