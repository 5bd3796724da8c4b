import { InspectClient } from './api.js';
import { wire } from './ui.js';

// Served from the same origin as the inspection service.
document.addEventListener('DOMContentLoaded', () => {
  wire(document, new InspectClient(''));
});
