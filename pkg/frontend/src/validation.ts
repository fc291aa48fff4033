/**
 * Client-side mirror of the service's demographics validation, so obvious
 * problems surface inline before any request is made. The server remains
 * authoritative; its 422 field errors are mapped onto the same shape.
 */

import type { Demographics, FieldErrors } from "./api.js";

export function validateDemographics(form: Partial<Demographics>): FieldErrors {
  const errors: FieldErrors = {};
  if (
    form.age === undefined ||
    !Number.isInteger(form.age) ||
    form.age < 18
  ) {
    errors.age = "age must be an integer >= 18";
  }
  if (form.gender !== "male" && form.gender !== "female") {
    errors.gender = "gender must be 'male' or 'female'";
  }
  if (
    form.bmi === undefined ||
    !Number.isFinite(form.bmi) ||
    form.bmi < 10 ||
    form.bmi > 80
  ) {
    errors.bmi = "bmi must be a number in [10, 80]";
  }
  if (typeof form.symptom !== "boolean") {
    errors.symptom = "symptom must be a boolean";
  }
  return errors;
}
